"""Distortion-aware combining, SINR and SE evaluation, hard detection and BER.

Effective channel matrices are (..., M, K); combiners are returned with the
same shape, column k being v_k.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .constellation import Constellation
from .distortion import apply_poly

__all__ = [
    "CombinerSet",
    "COMBINERS",
    "sinr",
    "se_lower_bound",
    "combine_da_mmse",
    "combine_ew_da_mmse",
    "combine_da_mrc",
    "combine_da_rzf",
    "combine",
    "transmit",
    "detect",
    "BerStats",
]

COMBINERS = ("da-mmse", "ew-da-mmse", "da-mrc", "da-rzf", "dua-rzf")


@dataclass(frozen=True)
class CombinerSet:
    V: np.ndarray
    kind: str

    def __post_init__(self):
        if self.kind not in COMBINERS:
            raise ValueError(f"unknown combiner kind {self.kind!r}")
        if not np.all(np.isfinite(self.V)):
            raise ValueError("combiner has non-finite entries")


def _outer_all(C):
    return C @ np.conj(np.swapaxes(C, -1, -2))


def sinr(V, C, Cmm) -> np.ndarray:
    """Instantaneous SINR of every UE, (..., K).

    Interference is sum_{i != k} c_i c_i^H plus the distortion-plus-noise ``Cmm``.
    """
    V, C = np.asarray(V), np.asarray(C)
    Q = np.asarray(Cmm) + _outer_all(C)
    vc = np.sum(np.conj(V) * C, axis=-2)  # v_k^H c_k
    num = np.abs(vc) ** 2
    total = np.real(np.sum(np.conj(V) * (Q @ V), axis=-2))
    den = total - num
    if np.any(den <= 0):
        raise ZeroDivisionError("non-positive interference-plus-noise power")
    return num / den


def se_lower_bound(sinr_values, axis=0) -> np.ndarray:
    """E{log2(1 + SINR)} averaged over ``axis`` (realizations)."""
    return np.mean(np.log2(1.0 + np.asarray(sinr_values)), axis=axis)


def _solve_per_user(R, C):
    # v_k = (R - c_k c_k^H)^{-1} c_k for each k, R (..., M, M)
    M, K = C.shape[-2:]
    ck = np.moveaxis(C, -1, -2)[..., None]  # (..., K, M, 1)
    A = R[..., None, :, :] - ck @ np.conj(np.swapaxes(ck, -1, -2))
    v = np.linalg.solve(A, ck)[..., 0]  # (..., K, M)
    return np.moveaxis(v, -2, -1)


def combine_da_mmse(C, Czz, sigma2: float) -> np.ndarray:
    """(C_zz + sigma2 I - c_k c_k^H)^{-1} c_k for all k."""
    C = np.asarray(C)
    M = C.shape[-2]
    return _solve_per_user(np.asarray(Czz) + sigma2 * np.eye(M), C)


def combine_ew_da_mmse(C, cmm_diag) -> np.ndarray:
    """(diag(C_mumu) + sum_{i != k} c_i c_i^H)^{-1} c_k for all k."""
    C = np.asarray(C)
    d = np.asarray(cmm_diag, dtype=float)
    R = _outer_all(C) + d[..., :, None] * np.eye(C.shape[-2])
    return _solve_per_user(R, C)


def combine_da_mrc(C) -> np.ndarray:
    return np.array(C, copy=True)


def combine_da_rzf(C, sigma2: float) -> np.ndarray:
    """C (C^H C + sigma2 I)^{-1}."""
    C = np.asarray(C)
    K = C.shape[-1]
    gram = np.conj(np.swapaxes(C, -1, -2)) @ C + sigma2 * np.eye(K)
    # X = C gram^{-1}  <=>  gram^H X^H = C^H, gram Hermitian
    return np.conj(np.swapaxes(np.linalg.solve(gram, np.conj(np.swapaxes(C, -1, -2))), -1, -2))


def combine(kind: str, C_hat, sigma2: float, Czz=None, cmm_diag=None) -> CombinerSet:
    """Build combiners by name from an effective-channel estimate (DuA-RZF is RZF on a DuA estimate)."""
    if kind == "da-mmse":
        if Czz is None:
            raise ValueError("DA-MMSE needs C_zz")
        V = combine_da_mmse(C_hat, Czz, sigma2)
    elif kind == "ew-da-mmse":
        if cmm_diag is None:
            raise ValueError("EW-DA-MMSE needs the distortion variances")
        V = combine_ew_da_mmse(C_hat, cmm_diag)
    elif kind == "da-mrc":
        V = combine_da_mrc(C_hat)
    elif kind in ("da-rzf", "dua-rzf"):
        V = combine_da_rzf(C_hat, sigma2)
    else:
        raise ValueError(f"unknown combiner {kind!r}; choose from {COMBINERS}")
    return CombinerSet(V, kind)


def transmit(G, eta, a_tilde, b_tilde, constellation: Constellation, sigma2: float,
             n_symbols: int, rng: np.random.Generator):
    """Uplink data over one channel: returns (y (n, M), symbol indices (n, K)).

    ``G`` is (M, K), ``eta`` (K,), ``a_tilde`` (M, T+1).
    """
    s, idx = constellation.sample((n_symbols, G.shape[-1]), rng)
    ups = apply_poly(b_tilde, s)
    u = (ups * np.sqrt(eta)) @ np.asarray(G).T
    z = apply_poly(np.asarray(a_tilde), u)
    noise = np.sqrt(sigma2 / 2) * (rng.standard_normal(z.shape) + 1j * rng.standard_normal(z.shape))
    return z + noise, idx


@dataclass(frozen=True)
class BerStats:
    """Per-UE bit-error counts."""

    errors: np.ndarray
    bits: np.ndarray

    @property
    def ber(self) -> np.ndarray:
        return self.errors / self.bits

    def __add__(self, other: "BerStats") -> "BerStats":
        return BerStats(self.errors + other.errors, self.bits + other.bits)


def detect(y, V, C_ref, constellation: Constellation, true_idx) -> BerStats:
    """Hard nearest-neighbour detection of v_k^H y / (v_k^H c_k) and Gray bit-error counting.

    ``C_ref`` is the effective channel used for gain normalization (the
    estimate for an implementable receiver, the truth for perfect CSI).
    """
    V = np.asarray(V)
    gain = np.sum(np.conj(V) * np.asarray(C_ref), axis=0)  # (K,)
    x = (np.asarray(y) @ np.conj(V)) / gain
    det = constellation.nearest(x)
    lab = constellation.labels
    errors = np.sum(lab[det] != lab[np.asarray(true_idx)], axis=(0, 2))
    n = np.full(V.shape[-1], x.shape[0] * constellation.bits_per_symbol)
    return BerStats(errors.astype(np.int64), n.astype(np.int64))
