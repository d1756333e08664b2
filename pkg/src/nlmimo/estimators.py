"""Pilot-based estimators of physical and effective channels and of distortion variances.

Arrays carry the BS antenna on the second-to-last axis and the UE (or
pilot sample) on the last axis, with optional leading batch axes.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np
from numpy.polynomial.hermite_e import hermegauss
from scipy import linalg

from .bussgang import _gain_terms, effective_channel_3rd
from .distortion import apply_poly

__all__ = [
    "PilotBook",
    "dft_pilots",
    "received_pilots",
    "despread",
    "dua_lmmse",
    "dua_effective",
    "hm",
    "rician_form_e1",
    "rician_form_e2",
    "rician_form_e3",
    "DaLmmseMoments",
    "build_da_moments",
    "da_moments_cubature",
    "da_moments_monte_carlo",
    "da_lmmse",
    "AffineVarianceEstimator",
    "mc_lmmse_variance",
    "nmse",
]


@dataclass(frozen=True)
class PilotBook:
    phi: np.ndarray

    @property
    def tau_p(self) -> int:
        return self.phi.shape[0]

    @property
    def K(self) -> int:
        return self.phi.shape[1]

    def is_orthogonal(self, atol: float = 1e-9) -> bool:
        gram = self.phi.conj().T @ self.phi
        return bool(np.allclose(gram, self.tau_p * np.eye(self.K), atol=atol * self.tau_p))


def dft_pilots(K: int, tau_p: int | None = None) -> PilotBook:
    """First K columns of the tau_p-point DFT matrix (unit-modulus entries)."""
    tau_p = K if tau_p is None else tau_p
    if tau_p < K:
        raise ValueError("need tau_p >= K for orthogonal DFT pilots")
    n = np.arange(tau_p)[:, None]
    k = np.arange(K)[None, :]
    return PilotBook(np.exp(-2j * np.pi * n * k / tau_p))


def received_pilots(G, eta_tilde, phi_tilde, a_tilde, sigma2: float, rng: np.random.Generator | None):
    """y^p (..., M, tau_p) for channels G (..., M, K); ``rng=None`` gives the noise-free signal."""
    G = np.asarray(G, dtype=complex)
    u = (G * np.sqrt(eta_tilde)[..., None, :]) @ np.asarray(phi_tilde).T
    z = apply_poly(np.asarray(a_tilde)[..., None, :], u)
    if rng is None:
        return z
    return z + np.sqrt(sigma2 / 2) * (rng.standard_normal(z.shape) + 1j * rng.standard_normal(z.shape))


def despread(yp, phi) -> np.ndarray:
    """phi_k^H y^p_m for every antenna and UE: (..., M, K)."""
    return np.asarray(yp) @ np.conj(np.asarray(phi))


def dua_lmmse(yp, book: PilotBook, beta, g_bar, p, sigma2: float) -> np.ndarray:
    """Distortion-unaware LMMSE of the physical channels from orthogonal pilots."""
    if not book.is_orthogonal():
        raise ValueError("distortion-unaware LMMSE needs mutually orthogonal pilots")
    beta = np.asarray(beta, dtype=float)[..., None, :]
    p = np.asarray(p, dtype=float)[..., None, :]
    tau = book.tau_p
    gain = np.sqrt(p) * beta / (tau * p * beta + sigma2)
    return g_bar + gain * (despread(yp, book.phi) - np.sqrt(p) * tau * g_bar)


def dua_effective(g_hat, a_tilde, b_tilde, eta) -> np.ndarray:
    """Map a physical-channel estimate to the effective-channel scale: a~_0 b~_0 sqrt(eta_k) g^."""
    a0 = np.asarray(a_tilde)[..., 0:1]
    b0 = np.atleast_1d(b_tilde)[0]
    return a0 * b0 * np.sqrt(eta)[..., None, :] * g_hat


def _ip(x, y):
    """x^H y along the last axis."""
    return np.sum(np.conj(x) * y, axis=-1)


def hm(x, y, h_bar):
    """x^H h h^H y for the LOS direction h = h_bar."""
    return _ip(x, h_bar) * _ip(h_bar, y)


def rician_form_e1(a1, b1, h_bar):
    """E{a^H h h^H b} for h ~ CN(h_bar, I)."""
    return hm(a1, b1, h_bar) + _ip(a1, b1)


def rician_form_e2(a1, b1, a2, b2, h_bar):
    """E{a1^H h h^H b1 a2^H h h^H b2} for h ~ CN(h_bar, I)."""
    a, b = (a1, a2), (b1, b2)
    out = hm(a1, b1, h_bar) * hm(a2, b2, h_bar)
    for (i1, j1), (i2, j2) in itertools.product(((0, 1), (1, 0)), repeat=2):
        out = out + (hm(a[i1], b[i2], h_bar) + _ip(a[i1], b[i2]) / 2) * _ip(a[j1], b[j2])
    return out


_PERM3 = tuple(itertools.permutations(range(3)))


def rician_form_e3(a1, b1, a2, b2, a3, b3, h_bar):
    """E{prod_{i=1..3} a_i^H h h^H b_i} for h ~ CN(h_bar, I).

    The correction sum runs over all orderings (i, j, k) of {1, 2, 3} for the
    a-vectors and independently for the b-vectors.
    """
    a, b = (a1, a2, a3), (b1, b2, b3)
    H = [[hm(a[i], b[j], h_bar) for j in range(3)] for i in range(3)]
    Pm = [[_ip(a[i], b[j]) for j in range(3)] for i in range(3)]
    out = H[0][0] * H[1][1] * H[2][2]
    for (i1, j1, k1) in _PERM3:
        for (i2, j2, k2) in _PERM3:
            out = out + (H[i1][i2] * H[j1][j2] * Pm[k1][k2] / 4
                         + H[i1][i2] * Pm[j1][j2] * Pm[k1][k2] / 2
                         + Pm[i1][i2] * Pm[j1][j2] * Pm[k1][k2] / 6)
    return out


@dataclass
class DaLmmseMoments:
    """First and second moments needed by the distortion-aware LMMSE, per antenna.

    Shapes: y_bar (..., M, tau), C_bar (..., M, K), C_cy (..., M, K, tau),
    C_yy (..., M, tau, tau). The remaining fields are the building blocks.
    """

    y_bar: np.ndarray
    C_bar: np.ndarray
    C_cy: np.ndarray
    C_yy: np.ndarray
    phi_vecs: np.ndarray | None = None
    h_bar: np.ndarray | None = None
    c_coeffs: tuple | None = None
    _gain: np.ndarray | None = None

    def gain(self) -> np.ndarray:
        """C_cy C_yy^{-1} via Cholesky, cached: (..., M, K, tau)."""
        if self._gain is None:
            Cyy = self.C_yy
            flat_yy = Cyy.reshape((-1,) + Cyy.shape[-2:])
            flat_cy = self.C_cy.reshape((-1,) + self.C_cy.shape[-2:])
            out = np.empty_like(flat_cy)
            for i in range(flat_yy.shape[0]):
                try:
                    cf = linalg.cho_factor(flat_yy[i], lower=True)
                except linalg.LinAlgError as e:
                    raise np.linalg.LinAlgError("pilot covariance is singular (sigma2 = 0?)") from e
                # W = C_cy C_yy^{-1}  <=>  C_yy W^H = C_cy^H
                out[i] = linalg.cho_solve(cf, flat_cy[i].conj().T).conj().T
            self._gain = out.reshape(self.C_cy.shape)
        return self._gain


def _c_coeffs(a_tilde, b_tilde, zeta):
    lin, cube, chi2 = _gain_terms(b_tilde, zeta)
    a0 = np.asarray(a_tilde)[..., 0]
    a1 = np.asarray(a_tilde)[..., 1]
    return a0 * lin, a1 * cube, 2 * a1 * lin * chi2


def build_da_moments(g_bar, beta, eta, eta_tilde, phi_tilde, a_tilde, b_tilde, zeta,
                     sigma2: float) -> DaLmmseMoments:
    """Closed-form LMMSE moments for third-order BS and UE distortion.

    ``g_bar`` (..., M, K); ``beta``, ``eta`` (data), ``eta_tilde`` (pilots) are (..., K);
    ``phi_tilde`` is the distorted pilot book (tau, K); ``a_tilde`` (..., M, 2).
    """
    g_bar = np.asarray(g_bar, dtype=complex)
    beta = np.asarray(beta, dtype=float)
    eta = np.asarray(eta, dtype=float)
    eta_tilde = np.asarray(eta_tilde, dtype=float)
    phi_tilde = np.asarray(phi_tilde, dtype=complex)
    a = np.asarray(a_tilde, dtype=complex)
    if a.shape[-1] != 2:
        raise ValueError("closed-form moments exist for third-order BS distortion only")
    tau, K = phi_tilde.shape

    h_bar = g_bar / np.sqrt(beta)[..., None, :]
    bs = h_bar.shape[:-1]  # (..., M)
    # phi_vecs[n] has entries sqrt(beta_k eta~_k) conj(phi~_kn)
    amp_p = np.sqrt(beta * eta_tilde)[..., None, None, :]
    phi_vecs = amp_p * np.conj(phi_tilde)[:, :]  # (..., 1, tau, K)
    phi_vecs = np.broadcast_to(phi_vecs, bs + (tau, K))
    amp_e = np.sqrt(beta * eta)[..., None, :]
    e = np.broadcast_to(amp_e[..., None, :] * np.eye(K), bs + (K, K))  # e[..., k, :] = e_k

    c0, c1, c2 = _c_coeffs(a, b_tilde, zeta)
    a0, a1 = a[..., 0], a[..., 1]
    a0c, a1c = np.conj(a0), np.conj(a1)
    hb = h_bar

    ph = [phi_vecs[..., n, :] for n in range(tau)]
    ek = [e[..., k, :] for k in range(K)]

    y_bar = np.stack([
        a0 * _ip(ph[n], hb) + a1 * _ip(ph[n], hb) * _ip(hb, ph[n]) * _ip(ph[n], hb)
        + 2 * a1 * _ip(ph[n], hb) * _ip(ph[n], ph[n])
        for n in range(tau)], axis=-1)

    sq_eta = np.sqrt(eta)[..., None, :]
    los_pow = eta[..., None, :] * np.abs(g_bar) ** 2
    tot = eta[..., None, :] * (np.abs(g_bar) ** 2 + beta[..., None, :])
    others = np.sum(tot, axis=-1, keepdims=True) - tot
    C_bar = (c0[..., None] * sq_eta * g_bar
             + c1[..., None] * sq_eta * g_bar * (los_pow + 2 * eta[..., None, :] * beta[..., None, :])
             + c2[..., None] * sq_eta * g_bar * others)

    E1, E2, E3 = rician_form_e1, rician_form_e2, rician_form_e3
    C_cy = np.zeros(bs + (K, tau), dtype=complex)
    for k in range(K):
        for n in range(tau):
            p_ = ph[n]
            val = (c0 * a0c * E1(ek[k], p_, hb)
                   + c0 * a1c * E2(ek[k], p_, p_, p_, hb)
                   + c1 * a0c * E2(ek[k], ek[k], ek[k], p_, hb)
                   + c1 * a1c * E3(ek[k], ek[k], ek[k], p_, p_, p_, hb))
            for l in range(K):
                if l == k:
                    continue
                val = val + (c2 * a0c * E2(ek[l], ek[l], ek[k], p_, hb)
                             + c2 * a1c * E3(ek[l], ek[l], ek[k], p_, p_, p_, hb))
            C_cy[..., k, n] = val - C_bar[..., k] * np.conj(y_bar[..., n])

    C_yy = np.zeros(bs + (tau, tau), dtype=complex)
    for n in range(tau):
        for j in range(n, tau):
            pn, pj = ph[n], ph[j]
            val = (np.abs(a0) ** 2 * E1(pn, pj, hb)
                   + a0 * a1c * E2(pn, pj, pj, pj, hb)
                   + a1 * a0c * E2(pn, pn, pn, pj, hb)
                   + np.abs(a1) ** 2 * E3(pn, pn, pn, pj, pj, pj, hb)
                   - y_bar[..., n] * np.conj(y_bar[..., j]))
            if n == j:
                val = val.real + sigma2
            C_yy[..., n, j] = val
            C_yy[..., j, n] = np.conj(val)

    return DaLmmseMoments(y_bar, C_bar, C_cy, C_yy, phi_vecs, h_bar, (c0, c1, c2))


def _moments_from_samples(zp, C, w, sigma2):
    """Weighted first/second moments over samples on axis 0 (weights sum to 1)."""
    wz = w.reshape((-1,) + (1,) * (zp.ndim - 1))
    y_bar = np.sum(wz * zp, axis=0)
    C_bar = np.sum(wz * C, axis=0)
    dz = zp - y_bar
    dc = C - C_bar
    C_cy = np.einsum("s,s...k,s...n->...kn", w, dc, np.conj(dz))
    C_yy = np.einsum("s,s...n,s...j->...nj", w, dz, np.conj(dz))
    tau = zp.shape[-1]
    return DaLmmseMoments(y_bar, C_bar, C_cy, C_yy + sigma2 * np.eye(tau))


def _numeric_moments(w_draws, g_bar, beta, eta, eta_tilde, phi_tilde, a_tilde, b_tilde, zeta, sigma2, weights):
    # w_draws: (S, K) standard complex Gaussian scatter, shared by all antennas
    g = g_bar[None] + np.sqrt(beta)[None, None, :] * w_draws[:, None, :]
    zp = received_pilots(g, eta_tilde, phi_tilde, a_tilde, sigma2, None)
    C = effective_channel_3rd(g * np.sqrt(eta), a_tilde, b_tilde, zeta)
    return _moments_from_samples(zp, C, weights, sigma2)


def da_moments_cubature(g_bar, beta, eta, eta_tilde, phi_tilde, a_tilde, b_tilde, zeta,
                        sigma2: float, nodes: int = 4) -> DaLmmseMoments:
    """The same moments by exact Gauss-Hermite cubature over the Rayleigh part.

    Every moment is a polynomial of degree <= 6 in the real and imaginary
    parts of the scatter, so ``nodes=4`` per dimension is exact. Cost grows
    as nodes**(2K); intended for K <= 5. ``g_bar`` is (M, K).
    """
    g_bar = np.asarray(g_bar, dtype=complex)
    K = g_bar.shape[-1]
    x, wx = hermegauss(nodes)
    wx = wx / wx.sum()
    grid = np.array(list(itertools.product(range(nodes), repeat=2 * K)))
    pts = x[grid] / np.sqrt(2)
    w_draws = pts[:, :K] + 1j * pts[:, K:]
    weights = np.prod(wx[grid], axis=1)
    return _numeric_moments(w_draws, g_bar, np.asarray(beta, float), np.asarray(eta, float),
                            np.asarray(eta_tilde, float), phi_tilde, a_tilde, b_tilde, zeta, sigma2, weights)


def da_moments_monte_carlo(g_bar, beta, eta, eta_tilde, phi_tilde, a_tilde, b_tilde, zeta,
                           sigma2: float, n_draws: int, rng: np.random.Generator) -> DaLmmseMoments:
    """Sample-average version of :func:`build_da_moments` from ``n_draws`` channel draws."""
    g_bar = np.asarray(g_bar, dtype=complex)
    K = g_bar.shape[-1]
    w_draws = (rng.standard_normal((n_draws, K)) + 1j * rng.standard_normal((n_draws, K))) / np.sqrt(2)
    weights = np.full(n_draws, 1.0 / n_draws)
    return _numeric_moments(w_draws, g_bar, np.asarray(beta, float), np.asarray(eta, float),
                            np.asarray(eta_tilde, float), phi_tilde, a_tilde, b_tilde, zeta, sigma2, weights)


def da_lmmse(yp, moments: DaLmmseMoments) -> np.ndarray:
    """Distortion-aware LMMSE estimate of the effective channel rows, (..., M, K)."""
    d = np.asarray(yp) - moments.y_bar
    return moments.C_bar + np.einsum("...kn,...n->...k", moments.gain(), d)


@dataclass
class AffineVarianceEstimator:
    """Affine LMMSE map from a feature vector to the normalized distortion variance.

    ``mode="linear"`` targets [C_mumu]_mm / sigma2 and floors estimates at 1;
    ``mode="log"`` targets its log10 and floors at 0.
    """

    mode: str
    weights: np.ndarray
    offset: float

    def predict_raw(self, X) -> np.ndarray:
        return np.asarray(X) @ self.weights + self.offset

    def predict(self, X) -> np.ndarray:
        """Clamped estimate in the target domain."""
        floor = 1.0 if self.mode == "linear" else 0.0
        return np.maximum(self.predict_raw(X), floor)

    def predict_variance(self, X) -> np.ndarray:
        """Estimate of [C_mumu]_mm / sigma2 regardless of mode."""
        r = self.predict(X)
        return r if self.mode == "linear" else 10.0**r


def mc_lmmse_variance(X, ratio, mode: str = "linear") -> AffineVarianceEstimator:
    """Fit the affine LMMSE estimator from Monte-Carlo draws.

    Parameters
    ----------
    X : (N, F) features
    ratio : (N,) true [C_mumu]_mm / sigma2 values
    mode : "linear" or "log"
    """
    if mode not in ("linear", "log"):
        raise ValueError(f"mode must be 'linear' or 'log', got {mode!r}")
    X = np.asarray(X, dtype=float)
    t = np.asarray(ratio, dtype=float)
    if mode == "log":
        t = np.log10(t)
    mx, mt = X.mean(axis=0), t.mean()
    Xc = X - mx
    Cxx = Xc.T @ Xc / len(X)
    Ctx = Xc.T @ (t - mt) / len(X)
    try:
        w = linalg.solve(Cxx, Ctx, assume_a="pos")
    except (linalg.LinAlgError, ValueError) as e:
        raise np.linalg.LinAlgError("degenerate feature covariance") from e
    if not np.all(np.isfinite(w)):
        raise np.linalg.LinAlgError("degenerate feature covariance")
    return AffineVarianceEstimator(mode, w, float(mt - mx @ w))


def nmse(estimate, truth, axis=None):
    """sum |est - true|^2 / sum |true|^2 over ``axis``."""
    estimate, truth = np.asarray(estimate), np.asarray(truth)
    return np.sum(np.abs(estimate - truth) ** 2, axis=axis) / np.sum(np.abs(truth) ** 2, axis=axis)
