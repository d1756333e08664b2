"""Closed-form Bussgang effective channels and distortion correlation matrices.

Notation:

* ``g_tilde`` -- power-scaled channels sqrt(eta_k) g_km, last axis is the UE index.
* ``a_tilde`` -- normalized BS coefficients, last axis the polynomial power t.
* ``b_tilde`` -- normalized UE coefficients.
* ``upsilon`` -- UE-distorted unit symbol sum_r b_r |s|^{2r} s.

Every function broadcasts over leading axes, so a (M, K) channel matrix,
a batch (N, K) of single-antenna channels, or (N, M, K) all work.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .constellation import Constellation, DistortedMoments, mixed_moment
from .distortion import apply_poly

__all__ = [
    "EffectiveChannelSet",
    "SymbolCrossMoments",
    "cubic_symbol_moment",
    "cubic_symbol_moment_indexed",
    "effective_channel_3rd",
    "symbol_cross_moments",
    "effective_channel_general",
    "quartic_form_moment",
    "sextic_form_moment",
    "czz_matrix",
    "czz_diagonal",
    "distortion_corr",
    "distortion_variance",
    "effective_channel_set",
    "monte_carlo_statistics",
    "NonPsdError",
]


class NonPsdError(ValueError):
    """Distortion correlation came out materially non-PSD."""


def _b3(b_tilde) -> np.ndarray:
    b = np.zeros(2, dtype=complex)
    src = np.atleast_1d(np.asarray(b_tilde, dtype=complex))
    if src.size > 2:
        raise ValueError("third-order closed forms take at most two UE coefficients")
    b[: src.size] = src
    return b


def _zeta(zeta, l: int) -> float:
    if isinstance(zeta, Constellation):
        from .constellation import moment

        return moment(zeta, l)
    return float(zeta[l])


def _gain_terms(b_tilde, zeta):
    """(E{upsilon s*}, E{|upsilon|^2 upsilon s*}, chi_2) for third-order UE distortion."""
    b0, b1 = _b3(b_tilde)
    B = lambda r1, r2: (b0, b1)[r1] * np.conj((b0, b1)[r2])
    B3 = lambda r1, r2, r3: (b0, b1)[r1] * np.conj((b0, b1)[r2]) * (b0, b1)[r3]
    z4, z6, z8, z10 = (_zeta(zeta, l) for l in (4, 6, 8, 10))
    lin = b0 + z4 * b1
    cube = (z10 * B3(1, 1, 1) + 2 * z8 * B3(1, 1, 0) + z8 * B3(1, 0, 1)
            + 2 * z6 * B3(0, 0, 1) + z6 * B3(0, 1, 0) + z4 * B3(0, 0, 0))
    chi2 = z6 * B(1, 1) + z4 * B(1, 0) + z4 * B(0, 1) + B(0, 0)
    return complex(lin), complex(cube), complex(chi2)


def cubic_symbol_moment(case: str, b_tilde, zeta) -> complex:
    """E{upsilon_l1 upsilon_l2* upsilon_l3 s_k*} under third-order UE distortion.

    ``case`` is one of ``"all"`` (l1=l2=l3=k), ``"first"`` (l1=k != l2=l3),
    ``"last"`` (l3=k != l1=l2) or ``"otherwise"``.
    """
    lin, cube, chi2 = _gain_terms(b_tilde, zeta)
    if case == "all":
        return cube
    if case in ("first", "last"):
        return lin * chi2
    if case == "otherwise":
        return 0j
    raise ValueError(f"unknown case {case!r}")


def cubic_symbol_moment_indexed(l1: int, l2: int, l3: int, k: int, b_tilde, zeta) -> complex:
    if l1 == l2 == l3 == k:
        return cubic_symbol_moment("all", b_tilde, zeta)
    if l1 == k and l2 == l3 != k:
        return cubic_symbol_moment("first", b_tilde, zeta)
    if l3 == k and l1 == l2 != k:
        return cubic_symbol_moment("last", b_tilde, zeta)
    return 0j


def effective_channel_3rd(g_tilde, a_tilde, b_tilde, zeta) -> np.ndarray:
    """Effective channel under third-order BS and UE distortion.

    ``zeta`` is a Constellation or a mapping l -> E{|s|^l} covering l = 4..10.
    """
    g = np.asarray(g_tilde, dtype=complex)
    a = np.asarray(a_tilde, dtype=complex)
    if a.shape[-1] != 2:
        raise ValueError("effective_channel_3rd needs exactly two BS coefficients")
    a0, a1 = a[..., 0:1], a[..., 1:2]
    lin, cube, chi2 = _gain_terms(b_tilde, zeta)
    mag2 = np.abs(g) ** 2
    others = np.sum(mag2, axis=-1, keepdims=True) - mag2
    return a0 * g * lin + a1 * mag2 * g * cube + 2 * a1 * g * lin * chi2 * others


@dataclass(frozen=True)
class SymbolCrossMoments:
    """plain[k, l] = E{upsilon^k (upsilon*)^l}; cross[k, l] = E{upsilon^k (upsilon*)^(l-1) s*} (l >= 1)."""

    plain: np.ndarray
    cross: np.ndarray

    @property
    def max_power(self) -> int:
        return self.plain.shape[0] - 1


def symbol_cross_moments(c: Constellation, b_tilde, max_power: int) -> SymbolCrossMoments:
    """Tables of mixed moments of the distorted symbol for powers 0..max_power.

    Entries whose power difference is not a multiple of four are zero by the
    rotational symmetry and are set to exactly 0 without evaluation.
    """
    n = max_power + 1
    plain = np.zeros((n, n), dtype=complex)
    cross = np.zeros((n, n), dtype=complex)
    for k in range(n):
        for l in range(n):
            if (k - l) % 4 == 0:
                plain[k, l] = 1.0 if k == l == 0 else mixed_moment(c, b_tilde, k, l)
                if l >= 1:
                    cross[k, l] = mixed_moment(c, b_tilde, k, l - 1, conj_s=1)
    return SymbolCrossMoments(plain, cross)


@lru_cache(maxsize=None)
def _set_partitions(n: int) -> tuple:
    """All set partitions of range(n) as tuples of blocks."""
    if n == 0:
        return ((),)
    out = []
    for part in _set_partitions(n - 1):
        for i in range(len(part)):
            out.append(part[:i] + (part[i] + (n - 1,),) + part[i + 1:])
        out.append(part + ((n - 1,),))
    return tuple(out)


def _distinct_sum(xs: list[np.ndarray]) -> np.ndarray:
    """sum over pairwise-distinct index tuples (f_1..f_S) of prod_s xs[s][..., f_s]."""
    if not xs:
        return np.ones(())
    total = 0
    for part in _set_partitions(len(xs)):
        term = 1
        for block in part:
            prod = xs[block[0]]
            for s in block[1:]:
                prod = prod * xs[s]
            term = term * ((-1) ** (len(block) - 1) * math.factorial(len(block) - 1)) * np.sum(prod, axis=-1)
        total = total + term
    return total


def _other_patterns(a_left: int, b_left: int, slots: int, bound=None):
    """Non-increasing multisets of nonzero (a, b) patterns with a-b = 0 mod 4 summing to (a_left, b_left)."""
    if a_left == 0 and b_left == 0:
        yield ()
        return
    if slots == 0:
        return
    for a in range(a_left, -1, -1):
        for b in range(b_left, -1, -1):
            if a + b == 0 or (a - b) % 4:
                continue
            if bound is not None and (a, b) > bound:
                continue
            for rest in _other_patterns(a_left - a, b_left - b, slots - 1, (a, b)):
                yield ((a, b),) + rest


@lru_cache(maxsize=None)
def _eq_terms(t: int, K: int):
    """Index patterns contributing to E{|u|^{2t} u s_k*}: (k1, j1, others, multinomial weight)."""
    terms = []
    for k1 in range(t + 2):
        for j1 in range(t + 1):
            if (k1 - j1 - 1) % 4:
                continue
            for others in _other_patterns(t + 1 - k1, t - j1, K - 1):
                w = math.factorial(t + 1) * math.factorial(t)
                w /= math.factorial(k1) * math.factorial(j1)
                for a, b in others:
                    w /= math.factorial(a) * math.factorial(b)
                # unordered among identical patterns
                for _, grp in itertools.groupby(others):
                    w /= math.factorial(len(list(grp)))
                terms.append((k1, j1, others, w))
    return tuple(terms)


def _moment_ut(g: np.ndarray, t: int, xm: SymbolCrossMoments) -> np.ndarray:
    """E{|u|^{2t} u s_k*} for every k, where u = sum_l g_l upsilon_l (g has UE last axis)."""
    K = g.shape[-1]
    if t + 1 > xm.max_power:
        raise ValueError(f"order t={t} exceeds the cross-moment table")
    gc = np.conj(g)
    out = np.zeros(g.shape, dtype=complex)
    terms = _eq_terms(t, K)
    for k in range(K):
        mask = np.ones(K)
        mask[k] = 0.0
        gk = g[..., k]
        acc = 0
        for k1, j1, others, w in terms:
            lead = w * xm.cross[k1, j1 + 1]
            if lead == 0:
                continue
            coef = lead
            xs = []
            for a, b in others:
                coef = coef * xm.plain[a, b]
                xs.append(g**a * gc**b * mask)
            if coef == 0:
                continue
            acc = acc + coef * gk**k1 * np.conj(gk) ** j1 * _distinct_sum(xs)
        out[..., k] = acc
    return out


def effective_channel_general(g_tilde, a_tilde, xm: SymbolCrossMoments) -> np.ndarray:
    """Effective channel for BS order 2T+1 = 2*a_tilde.shape[-1]-1 and any UE order in ``xm``."""
    g = np.asarray(g_tilde, dtype=complex)
    a = np.asarray(a_tilde, dtype=complex)
    out = np.zeros(np.broadcast_shapes(g.shape, a.shape[:-1] + (1,)), dtype=complex)
    for t in range(a.shape[-1]):
        out = out + a[..., t: t + 1] * _moment_ut(g, t, xm)
    return out


def _chi(chi, l):
    return float(chi[l]) if not isinstance(chi, DistortedMoments) else chi[l]


def _diag(A):
    return np.einsum("...ii->...i", A)


def _diag_mat(A):
    d = _diag(A)
    return d[..., :, None] * np.eye(A.shape[-1])


def _tr(A):
    return np.trace(A, axis1=-2, axis2=-1)[..., None, None]


def quartic_form_moment(A, chi) -> np.ndarray:
    """E{v v^H A v v^H} for i.i.d. rotation-symmetric entries with even moments ``chi``."""
    A = np.asarray(A, dtype=complex)
    c2, c4 = _chi(chi, 2), _chi(chi, 4)
    I = np.eye(A.shape[-1])
    return c2**2 * A + c2**2 * _tr(A) * I + (c4 - 2 * c2**2) * _diag_mat(A)


def sextic_form_moment(A, B, chi) -> np.ndarray:
    """E{v v^H A v v^H B v v^H} for i.i.d. rotation-symmetric entries."""
    A = np.asarray(A, dtype=complex)
    B = np.asarray(B, dtype=complex)
    c2, c4, c6 = _chi(chi, 2), _chi(chi, 4), _chi(chi, 6)
    I = np.eye(A.shape[-1])
    trA, trB = _tr(A), _tr(B)
    dA, dB = _diag_mat(A), _diag_mat(B)
    AB, BA = A @ B, B @ A
    g1 = AB + BA + trA * B + trB * A + trA * trB * I + _tr(AB) * I
    g2 = (dA @ B + dB @ A + A @ dB + B @ dA + _diag_mat(AB + BA)
          + trA * dB + trB * dA + _tr(dA @ dB) * I)
    g3 = dA @ dB
    return c2**3 * g1 + (c4 * c2 - 2 * c2**3) * g2 + (c6 - 9 * c4 * c2 + 12 * c2**3) * g3


def _czz_pairs(x, y, am, an, chi):
    """E{z_m z_n*} for power-scaled channel vectors x = g~_m, y = g~_n (UE last axis)."""
    c2 = _chi(chi, 2)
    yc = np.conj(y)
    A = np.conj(x)[..., :, None] * x[..., None, :]
    B = yc[..., :, None] * y[..., None, :]
    form = lambda Mat: np.einsum("...i,...ij,...j->...", x, Mat, yc)
    t1 = c2 * np.sum(x * yc, axis=-1)
    t2 = form(quartic_form_moment(A, chi))
    t3 = form(quartic_form_moment(B, chi))
    t4 = form(sextic_form_moment(A, B, chi))
    a0m, a1m = am[..., 0], am[..., 1]
    a0n, a1n = np.conj(an[..., 0]), np.conj(an[..., 1])
    return a0m * a0n * t1 + a1m * a0n * t2 + a0m * a1n * t3 + a1m * a1n * t4


def czz_matrix(g_tilde, a_tilde, chi) -> np.ndarray:
    """C_zz = E{z z^H | G} for third-order BS distortion; ``g_tilde`` is (..., M, K)."""
    g = np.asarray(g_tilde, dtype=complex)
    a = np.broadcast_to(np.asarray(a_tilde, dtype=complex), g.shape[:-1] + (2,))
    x = g[..., :, None, :]
    y = g[..., None, :, :]
    return _czz_pairs(x, y, a[..., :, None, :], a[..., None, :, :], chi)


def czz_diagonal(g_tilde, a_tilde, chi) -> np.ndarray:
    """Diagonal of C_zz only; ``g_tilde`` (..., K) per antenna."""
    g = np.asarray(g_tilde, dtype=complex)
    a = np.broadcast_to(np.asarray(a_tilde, dtype=complex), g.shape[:-1] + (2,))
    return _czz_pairs(g, g, a, a, chi).real


def distortion_corr(Czz, C, sigma2: float) -> np.ndarray:
    """C_mumu = C_zz + sigma2 I - C C^H, with the diagonal floored at sigma2 against roundoff."""
    C = np.asarray(C, dtype=complex)
    M = C.shape[-2]
    Cmm = np.asarray(Czz, dtype=complex) + sigma2 * np.eye(M) - C @ np.conj(np.swapaxes(C, -1, -2))
    Cmm = 0.5 * (Cmm + np.conj(np.swapaxes(Cmm, -1, -2)))
    d = _diag(Cmm).real
    if np.any(d - sigma2 < -1e-10 * sigma2):
        raise NonPsdError(f"distortion variance below the noise floor by {np.min(d - sigma2):.3e}")
    idx = np.arange(M)
    Cmm[..., idx, idx] = np.maximum(d, sigma2)
    return Cmm


def distortion_variance(g_tilde, a_tilde, C, chi, sigma2: float) -> np.ndarray:
    """Per-antenna [C_mumu]_mm = [C_zz]_mm + sigma2 - sum_k |C_mk|^2 (UE last axis)."""
    d = czz_diagonal(g_tilde, a_tilde, chi) - np.sum(np.abs(C) ** 2, axis=-1)
    if np.any(d < -1e-10 * sigma2):
        raise NonPsdError(f"distortion variance below the noise floor by {np.min(d):.3e}")
    return sigma2 + np.maximum(d, 0.0)


@dataclass(frozen=True)
class EffectiveChannelSet:
    C: np.ndarray
    Czz: np.ndarray | None
    Cmm: np.ndarray | None
    sigma2: float


def effective_channel_set(G, eta, a_tilde, b_tilde, c: Constellation, sigma2: float,
                          chi: DistortedMoments | None = None) -> EffectiveChannelSet:
    """Effective channel, C_zz and C_mumu for one realization (third order on both sides)."""
    from .constellation import distorted_moments

    g = np.asarray(G) * np.sqrt(eta)[..., None, :]
    chi = distorted_moments(c, b_tilde, 6) if chi is None else chi
    C = effective_channel_3rd(g, a_tilde, b_tilde, c)
    Czz = czz_matrix(g, a_tilde, chi)
    return EffectiveChannelSet(C, Czz, distortion_corr(Czz, C, sigma2), sigma2)


def monte_carlo_statistics(G, eta, a_tilde, b_tilde, c: Constellation, sigma2: float,
                           n_draws: int, rng: np.random.Generator, chunk: int = 50_000,
                           with_czz: bool = True) -> dict:
    """Sample-average estimates of E{y s^H}, E{z z^H} and E{mu mu^H} for a fixed G.

    Works for any polynomial order. Returns a dict with keys ``C``, ``Czz``,
    ``Cmm`` and ``C_se`` (standard error of each entry of ``C``).
    """
    G = np.asarray(G, dtype=complex)
    M, K = G.shape
    sq = np.sqrt(np.asarray(eta, dtype=float))
    s1 = np.zeros((M, K), complex)
    s2 = np.zeros((M, K))
    zz = np.zeros((M, M), complex)
    done = 0
    while done < n_draws:
        n = min(chunk, n_draws - done)
        s, _ = c.sample((n, K), rng)
        ups = apply_poly(b_tilde, s)
        u = (ups * sq) @ G.T
        z = apply_poly(a_tilde, u)
        y = z + np.sqrt(sigma2 / 2) * (rng.standard_normal(z.shape) + 1j * rng.standard_normal(z.shape))
        prod = y[:, :, None] * np.conj(s)[:, None, :]
        s1 += prod.sum(axis=0)
        s2 += (np.abs(prod) ** 2).sum(axis=0)
        if with_czz:
            zz += z.T @ np.conj(z)
        done += n
    C = s1 / n_draws
    var = np.maximum(s2 / n_draws - np.abs(C) ** 2, 0.0)
    out = {"C": C, "C_se": np.sqrt(var / n_draws)}
    if with_czz:
        Czz = zz / n_draws
        out["Czz"] = Czz
        out["Cmm"] = Czz + sigma2 * np.eye(M) - C @ C.conj().T
    return out
