"""Quasi-memoryless odd-order polynomial distortion at the BS and the UEs.

The reference coefficients describe the amplifier for inputs of magnitude
in [0, 1]; backoff normalization maps them to the operating point of the
actual input power. The default sets below are configuration choices, not
measured amplifier fits.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "HardwarePolynomial",
    "DEFAULT_THIRD_ORDER",
    "DEFAULT_SEVENTH_ORDER",
    "IDENTITY",
    "db_to_linear",
    "normalize_bs",
    "normalize_ue",
    "apply_poly",
    "distort_pilots",
    "add_noise",
]

DEFAULT_THIRD_ORDER = (1.0 + 0j, -0.125 - 0.025j)
DEFAULT_SEVENTH_ORDER = (1.0 + 0j, -0.125 - 0.025j, 0.012 + 0.004j, -0.0008 - 0.0003j)
IDENTITY = (1.0 + 0j,)


def db_to_linear(x_db):
    return 10.0 ** (np.asarray(x_db, dtype=float) / 10.0)


@dataclass(frozen=True)
class HardwarePolynomial:
    """Reference coefficients c_0..c_T of z = sum_t c_t |x|^{2t} x plus an input backoff.

    ``coeffs`` is either shape (T+1,) (shared) or (M, T+1) (per BS antenna).
    """

    side: str
    coeffs: np.ndarray = field(repr=False)
    backoff_db: float = 7.0

    def __post_init__(self):
        if self.side not in ("bs", "ue"):
            raise ValueError(f"side must be 'bs' or 'ue', got {self.side!r}")
        c = np.atleast_1d(np.asarray(self.coeffs, dtype=complex))
        if c.ndim > 2:
            raise ValueError("coefficients must be 1-D or (M, T+1)")
        if np.any(c[..., 0] == 0):
            raise ValueError("linear coefficient must be non-zero")
        if self.side == "ue" and c.ndim != 1:
            raise ValueError("UE coefficients are shared by all UEs")
        object.__setattr__(self, "coeffs", c)

    @property
    def order(self) -> int:
        """Highest power index T (R for UEs); the polynomial order is 2T+1."""
        return self.coeffs.shape[-1] - 1

    @property
    def backoff(self) -> float:
        return float(db_to_linear(self.backoff_db))

    @classmethod
    def from_config(cls, side: str, cfg: dict) -> "HardwarePolynomial":
        """From ``{"coeffs": [[re, im], ...], "backoff_db": 7}``."""
        pairs = np.asarray(cfg.get("coeffs", [[c.real, c.imag] for c in DEFAULT_THIRD_ORDER]), dtype=float)
        coeffs = pairs[..., 0] + 1j * pairs[..., 1]
        return cls(side, coeffs, float(cfg.get("backoff_db", 7.0)))

    def to_config(self) -> dict:
        return {
            "coeffs": np.stack([self.coeffs.real, self.coeffs.imag], axis=-1).tolist(),
            "backoff_db": self.backoff_db,
        }


def normalize_ue(poly: HardwarePolynomial) -> np.ndarray:
    """b~_r = b_r / b_off^r (unit-power input symbols)."""
    r = np.arange(poly.order + 1)
    return poly.coeffs / poly.backoff**r


def normalize_bs(poly: HardwarePolynomial, g_bar, beta, p) -> np.ndarray:
    """Per-antenna a~_{tm} = a_{tm} / (b_off * E{|u_m|^2})^t.

    ``g_bar`` has shape (..., M, K); ``beta`` and ``p`` shape (..., K).
    Returns shape (..., M, T+1).
    """
    g_bar = np.asarray(g_bar)
    beta = np.asarray(beta, dtype=float)[..., None, :]
    p = np.asarray(p, dtype=float)[..., None, :]
    power = np.sum((np.abs(g_bar) ** 2 + beta) * p, axis=-1)
    if np.any(power <= 0):
        raise ValueError("BS input power must be positive")
    t = np.arange(poly.order + 1)
    return poly.coeffs / (poly.backoff * power[..., None]) ** t


def apply_poly(coeffs, x):
    """Elementwise z = sum_t c_t |x|^{2t} x; ``coeffs`` broadcasts as (..., T+1) against x (...)."""
    coeffs = np.asarray(coeffs, dtype=complex)
    x = np.asarray(x)
    mag2 = np.abs(x) ** 2
    # Horner in |x|^2
    acc = np.broadcast_to(coeffs[..., -1], np.broadcast_shapes(coeffs.shape[:-1], x.shape)).astype(complex)
    for t in range(coeffs.shape[-1] - 2, -1, -1):
        acc = acc * mag2 + coeffs[..., t]
    return acc * x


def distort_pilots(pilots, b_tilde, p):
    """Distort the pilot book on the UE side and rescale to transmit power ``p``.

    Parameters
    ----------
    pilots : (tau_p, K) array with column energies tau_p
    b_tilde : normalized UE coefficients
    p : (..., K) transmit powers

    Returns
    -------
    distorted : (tau_p, K)
    eta_tilde : (..., K), tau_p p_k / ||distorted_k||^2
    """
    pilots = np.asarray(pilots, dtype=complex)
    distorted = apply_poly(b_tilde, pilots)
    energy = np.sum(np.abs(distorted) ** 2, axis=0)
    if np.any(energy <= 0):
        raise ValueError("distorted pilot has zero energy")
    tau_p = pilots.shape[0]
    return distorted, tau_p * np.asarray(p, dtype=float) / energy


def add_noise(z, sigma2: float, rng: np.random.Generator):
    z = np.asarray(z)
    n = rng.standard_normal(z.shape) + 1j * rng.standard_normal(z.shape)
    return z + np.sqrt(sigma2 / 2) * n
