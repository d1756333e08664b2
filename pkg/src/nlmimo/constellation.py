"""Transmit symbol ensembles and their moments.

A :class:`Constellation` is either a finite, equiprobable, unit-power
point set (QPSK or square QAM with Gray labels) or a marker for
circularly-symmetric complex Gaussian signalling. All moments of finite
sets are computed by exact enumeration; Gaussian moments analytically.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numpy.polynomial import polynomial as P

__all__ = [
    "Constellation",
    "DistortedMoments",
    "DEFAULT_MAX_ORDER",
    "build_constellation",
    "from_name",
    "check_shift_symmetry",
    "moment",
    "radial_poly",
    "mixed_moment",
    "distorted_moments",
    "power_scale",
]

# 2(T+R)+4 with T=R=3
DEFAULT_MAX_ORDER = 16

_NAMES = {
    "qpsk": ("qpsk", 4),
    "qam16": ("qam", 16),
    "qam64": ("qam", 64),
    "qam256": ("qam", 256),
    "gaussian": ("gaussian", None),
}


def _gray(n: int) -> np.ndarray:
    return np.arange(n) ^ (np.arange(n) >> 1)


def _square_qam(order: int) -> tuple[np.ndarray, np.ndarray]:
    side = math.isqrt(order)
    nbits_axis = int(math.log2(side))
    levels = 2 * np.arange(side) - (side - 1)
    gray = _gray(side)
    # Level index i carries the Gray word gray[i] on its axis.
    pts, labels = [], []
    for i_re in range(side):
        for i_im in range(side):
            pts.append(levels[i_re] + 1j * levels[i_im])
            word = (int(gray[i_re]) << nbits_axis) | int(gray[i_im])
            labels.append([(word >> (2 * nbits_axis - 1 - b)) & 1 for b in range(2 * nbits_axis)])
    pts = np.asarray(pts, dtype=complex)
    pts /= np.sqrt(np.mean(np.abs(pts) ** 2))
    return pts, np.asarray(labels, dtype=np.int8)


@dataclass(frozen=True)
class Constellation:
    """Equiprobable symbol set, or the circular Gaussian marker.

    ``symbols`` is empty for the Gaussian kind. ``labels[i]`` holds the Gray
    bit word of ``symbols[i]``.
    """

    kind: str
    order: int | None
    symbols: np.ndarray = field(repr=False)
    labels: np.ndarray = field(repr=False)
    max_order: int = DEFAULT_MAX_ORDER

    @property
    def is_gaussian(self) -> bool:
        return self.kind == "gaussian"

    @property
    def bits_per_symbol(self) -> int:
        if self.is_gaussian:
            raise ValueError("Gaussian signalling has no bit labels")
        return int(self.labels.shape[1])

    @property
    def name(self) -> str:
        if self.is_gaussian:
            return "gaussian"
        return "qpsk" if self.kind == "qpsk" else f"qam{self.order}"

    @property
    def zeta(self) -> dict[int, float]:
        """Even moments E{|s|^l} for l = 2, 4, ..., max_order."""
        return {l: moment(self, l) for l in range(2, self.max_order + 1, 2)}

    def sample(self, shape, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray | None]:
        """Draw i.i.d. symbols; returns (symbols, indices) with indices None for Gaussian."""
        if self.is_gaussian:
            s = (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2)
            return s, None
        idx = rng.integers(0, len(self.symbols), size=shape)
        return self.symbols[idx], idx

    def nearest(self, x: np.ndarray) -> np.ndarray:
        """Index of the nearest constellation point, elementwise."""
        if self.is_gaussian:
            raise ValueError("hard detection needs a finite constellation")
        x = np.asarray(x)
        d = np.abs(x[..., None] - self.symbols) ** 2
        return np.argmin(d, axis=-1)


def build_constellation(kind: str, order: int | None = None, max_order: int = DEFAULT_MAX_ORDER) -> Constellation:
    """Build a unit-average-power constellation.

    Parameters
    ----------
    kind : {"qpsk", "qam", "gaussian"}
    order : int
        4 for QPSK, a square number >= 16 (power of 4) for QAM; ignored for Gaussian.
    max_order : int
        Largest even moment order tabulated by :attr:`Constellation.zeta`.
    """
    kind = kind.lower()
    if max_order < 2 or max_order % 2:
        raise ValueError(f"max_order must be an even integer >= 2, got {max_order}")
    if kind == "gaussian":
        empty = np.zeros(0, dtype=complex)
        return Constellation("gaussian", None, empty, np.zeros((0, 0), dtype=np.int8), max_order)
    if kind == "qpsk":
        if order not in (None, 4):
            raise ValueError(f"QPSK has order 4, got {order}")
        pts, labels = _square_qam(4)
        c = Constellation("qpsk", 4, pts, labels, max_order)
    elif kind in ("qam", "squareqam"):
        if order is None or order < 16 or math.isqrt(order) ** 2 != order or order & (order - 1):
            raise ValueError(f"square QAM needs an order that is a power of 4 and >= 16, got {order}")
        pts, labels = _square_qam(order)
        c = Constellation("qam", order, pts, labels, max_order)
    else:
        raise ValueError(f"unsupported constellation kind {kind!r}")
    assert check_shift_symmetry(c)
    return c


def from_name(name: str, max_order: int = DEFAULT_MAX_ORDER) -> Constellation:
    """Constellation from a config string: "qpsk", "qam16", "gaussian", ..."""
    try:
        kind, order = _NAMES[name.lower()]
    except KeyError:
        raise ValueError(f"unknown constellation {name!r}; choose from {sorted(_NAMES)}") from None
    return build_constellation(kind, order, max_order)


def check_shift_symmetry(c: Constellation, atol: float = 1e-12) -> bool:
    """True iff the point multiset is invariant under rotation by 90 degrees."""
    if c.is_gaussian:
        return True
    pts = np.asarray(c.symbols)
    rot = pts * 1j
    used = np.zeros(len(pts), dtype=bool)
    for r in rot:
        hit = np.flatnonzero(~used & (np.abs(pts - r) < atol))
        if hit.size == 0:
            return False
        used[hit[0]] = True
    return True


def moment(c: Constellation, l: int) -> float:
    """zeta_l = E{|s|^l} for even l."""
    if l % 2 or l < 0:
        raise ValueError(f"moment order must be a non-negative even integer, got {l}")
    if c.is_gaussian:
        return float(math.factorial(l // 2))
    return float(np.mean(np.abs(c.symbols) ** l))


def radial_poly(b_tilde) -> np.ndarray:
    """Coefficients (ascending in x = |s|^2) of f(x) = sum_r b_r x^r, so that upsilon = s f(|s|^2)."""
    return np.atleast_1d(np.asarray(b_tilde, dtype=complex))


def _expect_radial(c: Constellation, poly: np.ndarray) -> complex:
    # E{F(|s|^2)} with F given by ascending coefficients
    if c.is_gaussian:
        return complex(sum(coef * math.factorial(j) for j, coef in enumerate(poly)))
    x = np.abs(c.symbols) ** 2
    return complex(np.mean(P.polyval(x, poly)))


def mixed_moment(c: Constellation, b_tilde, k: int, l: int, conj_s: int = 0) -> complex:
    """E{ upsilon^k (upsilon*)^l (s*)^conj_s } with upsilon = sum_r b_r |s|^{2r} s.

    Finite sets are enumerated directly. For Gaussian signals only the
    phase-balanced case (k == l + conj_s) survives and the radial part is
    expanded as a polynomial in |s|^2 whose moments are factorials.
    """
    if min(k, l, conj_s) < 0:
        raise ValueError("powers must be non-negative")
    f = radial_poly(b_tilde)
    if not c.is_gaussian:
        s = c.symbols
        ups = s * P.polyval(np.abs(s) ** 2, f)
        return complex(np.mean(ups**k * np.conj(ups) ** l * np.conj(s) ** conj_s))
    if k != l + conj_s:
        return 0j
    # s^k (s*)^(l+conj_s) = x^k ; radial factor f^k conj(f)^l
    poly = P.polymul(P.polypow(f, k) if k else np.array([1.0 + 0j]),
                     P.polypow(np.conj(f), l) if l else np.array([1.0 + 0j]))
    poly = np.concatenate([np.zeros(k, dtype=complex), poly])
    return _expect_radial(c, poly)


@dataclass(frozen=True)
class DistortedMoments:
    """chi_l = E{|upsilon|^l} for even l up to ``max_order``."""

    chi: dict[int, float]

    def __getitem__(self, l: int) -> float:
        return self.chi[l]


def distorted_moments(c: Constellation, b_tilde, max_order: int | None = None) -> DistortedMoments:
    """Even moments of the UE-distorted symbol for normalized UE coefficients ``b_tilde``."""
    max_order = c.max_order if max_order is None else max_order
    f = radial_poly(b_tilde)
    chi = {}
    for l in range(2, max_order + 1, 2):
        if c.is_gaussian:
            # |upsilon|^l = x^{l/2} |f(x)|^l
            mag2 = P.polymul(f, np.conj(f))
            poly = np.concatenate([np.zeros(l // 2, dtype=complex), P.polypow(mag2, l // 2)])
            chi[l] = float(_expect_radial(c, poly).real)
        else:
            s = c.symbols
            ups = s * P.polyval(np.abs(s) ** 2, f)
            chi[l] = float(np.mean(np.abs(ups) ** l))
    if chi[2] <= 0:
        raise ValueError("distorted symbol has zero power")
    return DistortedMoments(chi)


def power_scale(p, chi2: float):
    """eta = p / chi_2, so that sqrt(eta) * upsilon has average power p."""
    p = np.asarray(p, dtype=float)
    if chi2 <= 0 or np.any(p <= 0):
        raise ValueError("power and chi_2 must be positive")
    eta = p / chi2
    return float(eta) if eta.ndim == 0 else eta
