"""UE drops, 3GPP-UMi-style large-scale fading, power control and Rician channels.

Layout: BS at the centre of a square cell, uniform linear array with
half-wavelength spacing, UEs dropped uniformly with a minimum horizontal
distance. Every formula constant lives in :class:`ScenarioConfig`.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields, replace

import numpy as np

__all__ = [
    "ScenarioConfig",
    "LargeScale",
    "ChannelRealization",
    "pathloss_los_db",
    "pathloss_nlos_db",
    "los_probability",
    "rician_factor_db",
    "power_control",
    "sample_drop",
    "sample_drops",
    "sample_channel",
]


@dataclass(frozen=True)
class ScenarioConfig:
    M: int = 32
    K: int = 5
    cell_side: float = 250.0
    carrier_ghz: float = 2.0
    bandwidth_mhz: float = 20.0
    noise_dbm: float = -96.0
    bs_height: float = 10.0
    ue_height: float = 1.5
    p_max: float = 0.2
    delta_db: float = 20.0
    min_distance: float = 10.0
    shadow_los_db: float = 3.0
    shadow_nlos_db: float = 4.0
    kappa_intercept_db: float = 13.0
    kappa_slope_db: float = 0.03
    seed: int = 0

    def __post_init__(self):
        if self.M < 1 or self.K < 1:
            raise ValueError("M and K must be >= 1")
        if self.p_max <= 0:
            raise ValueError("p_max must be positive")
        if self.min_distance * 2 >= self.cell_side:
            raise ValueError("minimum distance does not fit in the cell")

    @property
    def sigma2(self) -> float:
        """Noise power in watts."""
        return 10.0 ** ((self.noise_dbm - 30.0) / 10.0)

    @property
    def delta(self) -> float:
        return 10.0 ** (self.delta_db / 10.0)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ScenarioConfig":
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ValueError(f"unknown scenario keys: {sorted(unknown)}")
        return cls(**d)

    def with_(self, **kw) -> "ScenarioConfig":
        return replace(self, **kw)


def pathloss_los_db(d, f_ghz):
    return 28.0 + 22.0 * np.log10(d) + 20.0 * np.log10(f_ghz)


def pathloss_nlos_db(d, f_ghz):
    return 22.7 + 36.7 * np.log10(d) + 26.0 * np.log10(f_ghz)


def los_probability(d):
    d = np.asarray(d, dtype=float)
    near = np.minimum(18.0 / np.maximum(d, 1e-300), 1.0)
    e = np.exp(-d / 36.0)
    return near * (1.0 - e) + e


def rician_factor_db(d, cfg: ScenarioConfig = ScenarioConfig()):
    return cfg.kappa_intercept_db - cfg.kappa_slope_db * np.asarray(d, dtype=float)


def power_control(beta, p_max: float, delta: float) -> np.ndarray:
    """p_k = p_max * min(1, delta * beta_min / beta_k), along the last axis.

    ``delta`` is linear. Received powers beta_k p_k then lie within a factor
    ``delta`` of the weakest UE.
    """
    beta = np.asarray(beta, dtype=float)
    if beta.size == 0:
        raise ValueError("empty gain list")
    if delta < 1:
        raise ValueError("delta must be >= 1 (linear)")
    bmin = beta.min(axis=-1, keepdims=True)
    return p_max * np.minimum(1.0, delta * bmin / beta)


@dataclass(frozen=True)
class LargeScale:
    """Long-term parameters of one drop (arrays may carry a leading batch axis).

    ``beta`` is the per-antenna variance of the scattered (NLOS) part and
    ``g_bar`` (..., M, K) the LOS mean, so beta_total = beta + |g_bar_km|^2.
    """

    distance: np.ndarray
    los: np.ndarray
    beta_total: np.ndarray
    kappa: np.ndarray
    beta: np.ndarray
    g_bar: np.ndarray
    p: np.ndarray
    azimuth: np.ndarray

    @property
    def M(self) -> int:
        return self.g_bar.shape[-2]

    @property
    def K(self) -> int:
        return self.g_bar.shape[-1]

    def eta(self, chi2: float) -> np.ndarray:
        return self.p / chi2

    def antenna(self, m) -> "LargeScale":
        """Restrict the LOS means to antenna index/indices ``m`` (keeps the M axis)."""
        gb = self.g_bar[..., np.atleast_1d(m), :]
        return replace(self, g_bar=gb)


@dataclass(frozen=True)
class ChannelRealization:
    G: np.ndarray
    large_scale: LargeScale


def _drop_positions(cfg: ScenarioConfig, shape, rng):
    half = cfg.cell_side / 2
    xy = rng.uniform(-half, half, size=shape + (2,))
    bad = np.hypot(xy[..., 0], xy[..., 1]) < cfg.min_distance
    while np.any(bad):
        xy[bad] = rng.uniform(-half, half, size=(int(bad.sum()), 2))
        bad = np.hypot(xy[..., 0], xy[..., 1]) < cfg.min_distance
    return xy


def sample_drops(cfg: ScenarioConfig, n: int | None, rng: np.random.Generator) -> LargeScale:
    """Draw ``n`` independent drops (``n=None`` gives a single drop without batch axis)."""
    shape = () if n is None else (n,)
    K, M = cfg.K, cfg.M
    xy = _drop_positions(cfg, shape + (K,), rng)
    d2 = np.hypot(xy[..., 0], xy[..., 1])
    d3 = np.hypot(d2, cfg.bs_height - cfg.ue_height)
    azimuth = np.arctan2(xy[..., 1], xy[..., 0])

    los = rng.uniform(size=d2.shape) < los_probability(d2)
    shadow = rng.standard_normal(d2.shape) * np.where(los, cfg.shadow_los_db, cfg.shadow_nlos_db)
    pl = np.where(los, pathloss_los_db(d3, cfg.carrier_ghz), pathloss_nlos_db(d3, cfg.carrier_ghz))
    beta_total = 10.0 ** (-(pl + shadow) / 10.0)
    kappa = np.where(los, 10.0 ** (rician_factor_db(d2, cfg) / 10.0), 0.0)

    beta = beta_total / (kappa + 1.0)
    # ULA steering at the UE azimuth, plus a random propagation phase.
    phase0 = rng.uniform(0, 2 * np.pi, size=d2.shape)
    m = np.arange(M)[:, None]
    steer = np.exp(1j * (phase0[..., None, :] + np.pi * m * np.sin(azimuth)[..., None, :]))
    g_bar = np.sqrt(kappa / (kappa + 1.0) * beta_total)[..., None, :] * steer

    p = power_control(beta_total, cfg.p_max, cfg.delta)
    return LargeScale(d3, los, beta_total, kappa, beta, g_bar, p, azimuth)


def sample_drop(cfg: ScenarioConfig, rng: np.random.Generator) -> LargeScale:
    return sample_drops(cfg, None, rng)


def sample_channel(ls: LargeScale, rng: np.random.Generator, n: int | None = None) -> ChannelRealization:
    """g_km = g_bar_km + sqrt(beta_k) * CN(0, 1); ``n`` adds a leading realization axis."""
    shape = ls.g_bar.shape if n is None else (n,) + ls.g_bar.shape
    w = (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2)
    G = ls.g_bar + np.sqrt(ls.beta)[..., None, :] * w
    return ChannelRealization(G, ls)
