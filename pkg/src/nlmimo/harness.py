"""Experiment orchestration: datasets, NMSE/SE/BER campaigns and their outputs.

Every random draw comes from a generator keyed by (master seed, purpose,
setup index[, realization index]), so results do not depend on worker
count or scheduling.
"""

from __future__ import annotations

import copy
import csv
import hashlib
import io
import json
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np

from . import bussgang as bg
from . import estimators as est
from . import neural as nn
from . import receivers as rx
from .constellation import distorted_moments, from_name
from .distortion import HardwarePolynomial, distort_pilots, normalize_bs, normalize_ue
from .scenario import ScenarioConfig, sample_channel, sample_drop, sample_drops

__all__ = [
    "EXPERIMENTS",
    "ConfigError",
    "MissingModelError",
    "HashMismatchError",
    "ExperimentSpec",
    "System",
    "config_hash",
    "rng_for",
    "worker_count",
    "generate_samples",
    "generate_dataset",
    "fit_mc_variance",
    "run_nmse_experiment",
    "run_se_experiment",
    "run_ber_experiment",
    "run_train",
    "CsvSink",
    "write_plot_script",
]

log = logging.getLogger(__name__)

EXPERIMENTS = ("se-cdf", "nmse-channel", "nmse-variance", "ber", "dataset-gen", "train", "eval", "export")
CHANNEL_ESTIMATORS = ("dua-lmmse", "da-lmmse", "da-lmmse-mc", "dl")
VARIANCE_ESTIMATORS = ("mc-lmmse-lin", "mc-lmmse-log", "dl")
BER_COMBOS = ("dua-rzf", "da-rzf-lmmse", "da-rzf-dl", "da-rzf-perfect", "ew-da-mmse-dl", "ew-da-mmse-perfect")
WORKERS_ENV = "NLMIMO_WORKERS"

_PURPOSES = {"drop": 1, "channel": 2, "pilot-noise": 3, "symbols": 4, "dataset": 5, "mc-variance": 6,
             "train": 7, "eval": 8, "mc-moments": 9}


class ConfigError(ValueError):
    pass


class MissingModelError(FileNotFoundError):
    pass


class HashMismatchError(ConfigError):
    pass


def rng_for(master: int, purpose: str, *index: int) -> np.random.Generator:
    """Independent stream for (purpose, setup, realization, ...) under one master seed."""
    key = (_PURPOSES[purpose],) + tuple(int(i) for i in index)
    return np.random.default_rng(np.random.SeedSequence(int(master), spawn_key=key))


def worker_count() -> int:
    raw = os.environ.get(WORKERS_ENV, "1")
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError(f"{WORKERS_ENV} must be an integer, got {raw!r}") from None
    return max(1, n)


# ---------------------------------------------------------------- configuration

_DEFAULT_POLY = {"coeffs": [[1.0, 0.0], [-0.125, -0.025]], "backoff_db": 7.0}


@dataclass
class ExperimentSpec:
    experiment: str
    scenario: ScenarioConfig = field(default_factory=ScenarioConfig)
    constellation: str = "qpsk"
    bs_poly: dict = field(default_factory=lambda: dict(_DEFAULT_POLY))
    ue_poly: dict = field(default_factory=lambda: dict(_DEFAULT_POLY))
    tau_p: int | None = None
    estimators: list = field(default_factory=list)
    receivers: list = field(default_factory=list)
    setups: int = 100
    realizations: int = 100
    symbols: int = 2000
    samples: int = 300000
    mc_draws: int = 100000
    train: dict = field(default_factory=dict)
    channel_model: str | None = None
    variance_model: str | None = None
    dataset: str | None = None
    seed: int = 0

    def __post_init__(self):
        if self.experiment not in EXPERIMENTS:
            raise ConfigError(f"unknown experiment {self.experiment!r}; choose from {EXPERIMENTS}")
        for name in ("setups", "realizations", "symbols", "samples", "mc_draws"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        allowed = {"nmse-channel": CHANNEL_ESTIMATORS, "nmse-variance": VARIANCE_ESTIMATORS}.get(self.experiment)
        if allowed is not None:
            bad = [e for e in self.estimators if e not in allowed]
            if bad:
                raise ConfigError(f"estimators {bad} not valid for {self.experiment}; choose from {allowed}")
        if self.experiment == "se-cdf":
            bad = [r for r in self.receivers if r not in rx.COMBINERS[:4]]
            if bad:
                raise ConfigError(f"receivers {bad} not valid for se-cdf")
        if self.experiment == "ber":
            bad = [r for r in self.receivers if r not in BER_COMBOS]
            if bad:
                raise ConfigError(f"receiver combos {bad} not valid for ber; choose from {BER_COMBOS}")
        try:
            nn.TrainConfig.from_dict(self.train)
        except (TypeError, ValueError) as e:
            raise ConfigError(f"bad train section: {e}") from None

    @classmethod
    def from_dict(cls, d: dict, experiment: str | None = None) -> "ExperimentSpec":
        d = copy.deepcopy(d)
        if experiment is not None:
            d["experiment"] = experiment
        if "experiment" not in d:
            raise ConfigError("no experiment kind given")
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        try:
            d["scenario"] = ScenarioConfig.from_dict(d.get("scenario", {}))
            return cls(**d)
        except ConfigError:
            raise
        except (TypeError, ValueError) as e:
            raise ConfigError(str(e)) from None

    def to_dict(self) -> dict:
        out = {k: copy.deepcopy(getattr(self, k)) for k in self.__dataclass_fields__}
        out["scenario"] = self.scenario.to_dict()
        return out

    @property
    def hash(self) -> str:
        return config_hash(self.to_dict())

    @property
    def train_config(self) -> nn.TrainConfig:
        return nn.TrainConfig.from_dict(self.train)


def config_hash(d: dict) -> str:
    blob = json.dumps(d, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def apply_override(d: dict, assignment: str) -> None:
    """Set a dotted key from ``key=value``; the value is parsed as JSON when possible."""
    if "=" not in assignment:
        raise ConfigError(f"override {assignment!r} is not key=value")
    key, raw = assignment.split("=", 1)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    parts = key.split(".")
    node = d
    for p in parts[:-1]:
        node = node.setdefault(p, {})
        if not isinstance(node, dict):
            raise ConfigError(f"override path {key!r} crosses a non-table value")
    node[parts[-1]] = value


# ---------------------------------------------------------------- system

class System:
    """Quantities fixed by the configuration (constellation, polynomials, pilots)."""

    def __init__(self, spec: ExperimentSpec):
        self.spec = spec
        self.cfg = spec.scenario
        try:
            self.c = from_name(spec.constellation)
            self.bs = HardwarePolynomial.from_config("bs", spec.bs_poly)
            self.ue = HardwarePolynomial.from_config("ue", spec.ue_poly)
            self.book = est.dft_pilots(self.cfg.K, spec.tau_p)
        except ValueError as e:
            raise ConfigError(str(e)) from None
        self.b_tilde = normalize_ue(self.ue)
        self.chi = distorted_moments(self.c, self.b_tilde)
        self.sigma2 = self.cfg.sigma2

    @property
    def third_order(self) -> bool:
        return self.bs.order <= 1 and self.ue.order <= 1

    def _bs_coeffs(self) -> HardwarePolynomial:
        if self.bs.order >= 1:
            return self.bs
        return HardwarePolynomial("bs", np.append(self.bs.coeffs, 0), self.bs.backoff_db)

    def _ue_b3(self):
        return self.b_tilde if self.ue.order >= 1 else np.append(self.b_tilde, 0)

    @cached_property
    def cross_moments(self):
        return bg.symbol_cross_moments(self.c, self.b_tilde, self.bs.order + 1)

    def setup(self, ls) -> "SetupState":
        return SetupState(self, ls)

    def effective(self, g_tilde, a_tilde):
        if self.third_order:
            return bg.effective_channel_3rd(g_tilde, a_tilde, self._ue_b3(), self.c.zeta)
        return bg.effective_channel_general(g_tilde, a_tilde, self.cross_moments)

    def variance_ratio(self, g_tilde, a_tilde, C):
        """[C_mumu]_mm / sigma2 per antenna (third-order BS distortion)."""
        if self.bs.order > 1:
            raise ConfigError("distortion variances are available for third-order BS distortion only")
        return bg.distortion_variance(g_tilde, a_tilde, C, self.chi, self.sigma2) / self.sigma2


class SetupState:
    """Per-drop derived quantities."""

    def __init__(self, system: System, ls):
        self.sys = system
        self.ls = ls
        self.eta = ls.eta(system.chi[2])
        self.a_tilde = normalize_bs(system._bs_coeffs(), ls.g_bar, ls.beta, ls.p)
        self.phi_tilde, self.eta_tilde = distort_pilots(system.book.phi, system.b_tilde, ls.p)
        self.gains = np.sqrt((ls.beta[..., None, :] + np.abs(ls.g_bar) ** 2) * self.eta[..., None, :] / system.sigma2)

    @cached_property
    def moments(self):
        s = self.sys
        if not s.third_order:
            raise ConfigError("closed-form DA-LMMSE needs third-order polynomials")
        return est.build_da_moments(self.ls.g_bar, self.ls.beta, self.eta, self.eta_tilde, self.phi_tilde,
                                    self.a_tilde, s._ue_b3(), s.c.zeta, s.sigma2)

    def realize(self, rng, n):
        """n channel realizations: (G, g_tilde, C, received pilots)."""
        G = sample_channel(self.ls, rng, n).G
        g_tilde = G * np.sqrt(self.eta)[..., None, :]
        C = self.sys.effective(g_tilde, self.a_tilde)
        return G, g_tilde, C

    def pilots(self, G, rng):
        return est.received_pilots(G, self.eta_tilde, self.phi_tilde, self.a_tilde, self.sys.sigma2, rng)

    def features(self, yp):
        return nn.build_features(yp, self.sys.book.phi, self.gains)


# ---------------------------------------------------------------- datasets

def generate_samples(system: System, n: int, rng: np.random.Generator, with_variance: bool = True) -> dict:
    """``n`` single-antenna training samples, each from a fresh drop and channel.

    All antennas of a drop share the gains and, up to a uniform phase, the LOS
    mean, so a one-antenna array draws from the same per-antenna distribution.
    """
    cfg1 = system.cfg.with_(M=1)
    ls = sample_drops(cfg1, n, rng)
    st = SetupState(system, ls)
    G = sample_channel(ls, rng).G  # (n, 1, K)
    g_tilde = G * np.sqrt(st.eta)[:, None, :]
    C = system.effective(g_tilde, st.a_tilde)
    yp = st.pilots(G, rng)
    X, perm = st.features(yp)
    out = {"X": X[:, 0], "perm": perm[:, 0], "C_sorted": nn.permute_users(C, perm)[:, 0]}
    if with_variance:
        out["log_ratio"] = np.log10(system.variance_ratio(g_tilde, st.a_tilde, C)[:, 0])
    return out


_CHUNK = 20000


def _samples_chunk(args):
    spec_dict, purpose, i, n, with_var = args
    system = System(ExperimentSpec.from_dict(spec_dict))
    return generate_samples(system, n, rng_for(system.spec.seed, purpose, i), with_var)


def generate_samples_parallel(spec: ExperimentSpec, n: int, purpose: str = "dataset", with_variance=True) -> dict:
    chunks = [(spec.to_dict(), purpose, i, min(_CHUNK, n - i * _CHUNK), with_variance)
              for i in range((n + _CHUNK - 1) // _CHUNK)]
    parts = _map(_samples_chunk, chunks)
    return {k: np.concatenate([p[k] for p in parts]) for k in parts[0]}


def generate_dataset(spec: ExperimentSpec, out: Path) -> Path:
    data = generate_samples_parallel(spec, spec.samples)
    path = Path(out) / "dataset.npz"
    _save_npz(path, data, spec.hash)
    return path


def _save_npz(path: Path, data: dict, h: str) -> None:
    # np.savez stamps zip entries with a fixed date, so equal arrays give equal bytes
    buf = io.BytesIO()
    np.savez(buf, config_hash=np.array(h), **data)
    Path(path).write_bytes(buf.getvalue())


def load_dataset(path) -> dict:
    with np.load(path) as f:
        return {k: f[k] for k in f.files}


# ---------------------------------------------------------------- estimators

def fit_mc_variance(spec: ExperimentSpec, mode: str) -> est.AffineVarianceEstimator:
    data = generate_samples_parallel(spec, spec.mc_draws, purpose="mc-variance")
    return est.mc_lmmse_variance(data["X"], 10.0 ** data["log_ratio"], mode)


def _load(path, kind):
    if path is None:
        raise MissingModelError(f"no {kind} model path configured")
    try:
        m = nn.load_model(path)
    except FileNotFoundError as e:
        raise MissingModelError(str(e)) from None
    if m.kind != kind:
        raise ConfigError(f"{path} holds a {m.kind} model, expected {kind}")
    return m


def _channel_estimates(st: SetupState, yp, names, models) -> dict:
    s = st.sys
    out = {}
    for name in names:
        if name == "dua-lmmse":
            gh = est.dua_lmmse(yp, s.book, st.ls.beta, st.ls.g_bar, st.ls.p, s.sigma2)
            out[name] = est.dua_effective(gh, st.a_tilde, s.b_tilde, st.eta)
        elif name == "da-lmmse":
            out[name] = est.da_lmmse(yp, st.moments)
        elif name == "da-lmmse-mc":
            m = est.da_moments_monte_carlo(st.ls.g_bar, st.ls.beta, st.eta, st.eta_tilde, st.phi_tilde,
                                           st.a_tilde, s._ue_b3(), s.c.zeta, s.sigma2, s.spec.mc_draws,
                                           models["mc-rng"])
            out[name] = est.da_lmmse(yp, m)
        elif name == "dl":
            X, perm = st.features(yp)
            out[name] = nn.predict_channel(models["channel"], X, perm)
    return out


# ---------------------------------------------------------------- campaigns

def _map(fn, items):
    n = worker_count()
    if n == 1 or len(items) == 1:
        return [fn(i) for i in items]
    with ProcessPoolExecutor(max_workers=n) as ex:
        return list(ex.map(fn, items))


def _nmse_db(e, t, axis):
    return 10.0 * np.log10(est.nmse(e, t, axis=axis))


def _nmse_channel_setup(args):
    spec_dict, s = args
    spec = ExperimentSpec.from_dict(spec_dict)
    system = System(spec)
    models = {"channel": _load(spec.channel_model, "channel")} if "dl" in spec.estimators else {}
    models["mc-rng"] = rng_for(spec.seed, "mc-moments", s)
    st = system.setup(sample_drop(spec.scenario, rng_for(spec.seed, "drop", s)))
    G, _, C = st.realize(rng_for(spec.seed, "channel", s), spec.realizations)
    yp = st.pilots(G, rng_for(spec.seed, "pilot-noise", s))
    ests = _channel_estimates(st, yp, spec.estimators, models)
    snr = 10 * np.log10(st.ls.beta_total * st.ls.p / system.sigma2)
    rows = []
    for name in spec.estimators:
        per_ue = _nmse_db(ests[name], C, axis=(0, 1))
        rows += [{"setup": s, "ue": k, "snr_db": snr[k], "estimator": name, "nmse_db": per_ue[k]}
                 for k in range(system.cfg.K)]
    return rows


def _nmse_variance_setup(args):
    spec_dict, s, fitted = args
    spec = ExperimentSpec.from_dict(spec_dict)
    system = System(spec)
    st = system.setup(sample_drop(spec.scenario, rng_for(spec.seed, "drop", s)))
    G, g_tilde, C = st.realize(rng_for(spec.seed, "channel", s), spec.realizations)
    yp = st.pilots(G, rng_for(spec.seed, "pilot-noise", s))
    truth = system.variance_ratio(g_tilde, st.a_tilde, C)
    X, _ = st.features(yp)
    rows = []
    for name in spec.estimators:
        if name == "dl":
            pred = 10.0 ** nn.predict_log_variance(fitted["dl"], X)
        else:
            pred = fitted[name].predict_variance(X)
        rows.append({"setup": s, "estimator": name, "nmse_db": float(_nmse_db(pred, truth, None))})
    return rows


def run_nmse_experiment(spec: ExperimentSpec, target: str = "channel") -> tuple[list, dict]:
    """Per-setup NMSE rows and a median summary per estimator."""
    if target == "channel":
        if "dl" in spec.estimators:
            _load(spec.channel_model, "channel")
        rows = [r for part in _map(_nmse_channel_setup, [(spec.to_dict(), s) for s in range(spec.setups)])
                for r in part]
    else:
        fitted = {}
        for name in spec.estimators:
            if name == "dl":
                fitted[name] = _load(spec.variance_model, "variance")
            else:
                fitted[name] = fit_mc_variance(spec, "linear" if name == "mc-lmmse-lin" else "log")
        rows = [r for part in _map(_nmse_variance_setup, [(spec.to_dict(), s, fitted) for s in range(spec.setups)])
                for r in part]
    summary = {name: {"median_nmse_db": float(np.median([r["nmse_db"] for r in rows if r["estimator"] == name])),
                      "p10_nmse_db": float(np.percentile([r["nmse_db"] for r in rows if r["estimator"] == name], 10)),
                      "p90_nmse_db": float(np.percentile([r["nmse_db"] for r in rows if r["estimator"] == name], 90))}
               for name in spec.estimators}
    return rows, summary


def _se_setup(args):
    spec_dict, s = args
    spec = ExperimentSpec.from_dict(spec_dict)
    system = System(spec)
    if not system.third_order:
        raise ConfigError("SE analysis needs third-order polynomials")
    st = system.setup(sample_drop(spec.scenario, rng_for(spec.seed, "drop", s)))
    rng = rng_for(spec.seed, "channel", s)
    names = spec.receivers or list(rx.COMBINERS[:4])
    rates = {n: [] for n in names}
    violations = 0
    for _ in range(spec.realizations):
        G = sample_channel(st.ls, rng).G
        E = bg.effective_channel_set(G, st.eta, st.a_tilde, system._ue_b3(), system.c, system.sigma2, system.chi)
        cmm_diag = np.real(np.diag(E.Cmm))
        sinrs = {}
        for n in set(names) | {"da-mmse"}:
            V = rx.combine(n, E.C, system.sigma2, Czz=E.Czz, cmm_diag=cmm_diag).V
            sinrs[n] = rx.sinr(V, E.C, E.Cmm)
        ref = sinrs["da-mmse"] * (1 + 1e-9) + 1e-12
        violations += int(sum(np.sum(sinrs[n] > ref) for n in names))
        for n in names:
            rates[n].append(np.log2(1 + sinrs[n]))
    rows = []
    for n in names:
        se = np.mean(rates[n], axis=0)
        rows += [{"setup": s, "ue": k, "receiver": n, "se": se[k]} for k in range(system.cfg.K)]
    return rows, violations


def run_se_experiment(spec: ExperimentSpec) -> tuple[list, dict]:
    if from_name(spec.constellation).is_gaussian is False:
        raise ConfigError("the SE analysis assumes Gaussian signalling; set constellation to 'gaussian'")
    parts = _map(_se_setup, [(spec.to_dict(), s) for s in range(spec.setups)])
    rows = [r for p, _ in parts for r in p]
    names = spec.receivers or list(rx.COMBINERS[:4])
    summary = {n: {"median_se": float(np.median([r["se"] for r in rows if r["receiver"] == n]))} for n in names}
    summary["sinr_violations"] = int(sum(v for _, v in parts))
    return rows, summary


def _ber_setup(args):
    spec_dict, s = args
    spec = ExperimentSpec.from_dict(spec_dict)
    system = System(spec)
    combos = spec.receivers or list(BER_COMBOS)
    models = {}
    if any(c.endswith("-dl") for c in combos):
        models["channel"] = _load(spec.channel_model, "channel")
    if "ew-da-mmse-dl" in combos:
        models["variance"] = _load(spec.variance_model, "variance")
    st = system.setup(sample_drop(spec.scenario, rng_for(spec.seed, "drop", s)))
    need = {"dua-rzf": "dua-lmmse", "da-rzf-lmmse": "da-lmmse", "da-rzf-dl": "dl", "ew-da-mmse-dl": "dl"}
    est_names = sorted({need[c] for c in combos if c in need})
    K = system.cfg.K
    stats = {c: rx.BerStats(np.zeros(K, np.int64), np.zeros(K, np.int64)) for c in combos}
    for r in range(spec.realizations):
        G, g_tilde, C = st.realize(rng_for(spec.seed, "channel", s, r), None)
        yp = st.pilots(G, rng_for(spec.seed, "pilot-noise", s, r))
        ests = _channel_estimates(st, yp, est_names, models)
        y, idx = rx.transmit(G, st.eta, st.a_tilde, system._ue_b3() if system.third_order else system.b_tilde,
                             system.c, system.sigma2, spec.symbols, rng_for(spec.seed, "symbols", s, r))
        for combo in combos:
            if combo == "ew-da-mmse-perfect":
                ch = C
                V = rx.combine_ew_da_mmse(C, system.sigma2 * system.variance_ratio(g_tilde, st.a_tilde, C))
            elif combo == "ew-da-mmse-dl":
                ch = ests["dl"]
                X, _ = st.features(yp)
                var = system.sigma2 * 10.0 ** nn.predict_log_variance(models["variance"], X)
                V = rx.combine_ew_da_mmse(ch, var)
            else:
                ch = C if combo == "da-rzf-perfect" else ests[need[combo]]
                V = rx.combine_da_rzf(ch, system.sigma2)
            stats[combo] = stats[combo] + rx.detect(y, V, ch, system.c, idx)
    order = np.argsort(st.ls.beta_total * st.ls.p, kind="stable")  # ascending SNR
    rows = []
    for combo in combos:
        for rank, k in enumerate(order):
            e, b = int(stats[combo].errors[k]), int(stats[combo].bits[k])
            rows.append({"setup": s, "ue_rank": rank, "combo": combo, "errors": e, "bits": b, "ber": e / b})
    return rows


def run_ber_experiment(spec: ExperimentSpec) -> tuple[list, dict]:
    c = from_name(spec.constellation)
    if c.is_gaussian:
        raise ConfigError("BER needs a finite constellation")
    combos = spec.receivers or list(BER_COMBOS)
    if any(x.endswith("-dl") for x in combos):
        _load(spec.channel_model, "channel")
    if "ew-da-mmse-dl" in combos:
        _load(spec.variance_model, "variance")
    rows = [r for part in _map(_ber_setup, [(spec.to_dict(), s) for s in range(spec.setups)]) for r in part]
    summary = {}
    for combo in combos:
        per_rank = []
        for rank in range(spec.scenario.K):
            sel = [r for r in rows if r["combo"] == combo and r["ue_rank"] == rank]
            per_rank.append({"median_ber": float(np.median([r["ber"] for r in sel])),
                             "errors": int(sum(r["errors"] for r in sel)), "bits": int(sum(r["bits"] for r in sel))})
        summary[combo] = per_rank
    return rows, summary


def run_train(spec: ExperimentSpec, out: Path) -> dict:
    """Train both nets (the variance net only for third-order BS distortion) and save them in ``out``."""
    if spec.dataset:
        data = load_dataset(spec.dataset)
    else:
        data = generate_samples_parallel(spec, spec.samples, with_variance=System(spec).bs.order <= 1)
    cfg = spec.train_config
    summary = {}
    res = nn.train_channel_net(data["X"], data["C_sorted"], cfg, spec.hash)
    path = Path(out) / "channel_model.json"
    nn.save_model(res.model, path)
    summary["channel"] = {"path": str(path), **res.model.meta, "epochs": len(res.val_loss)}
    if "log_ratio" in data:
        res = nn.train_variance_net(data["X"], data["log_ratio"], cfg, spec.hash)
        path = Path(out) / "variance_model.json"
        nn.save_model(res.model, path)
        summary["variance"] = {"path": str(path), **res.model.meta, "epochs": len(res.val_loss)}
    return summary


def run_eval(spec: ExperimentSpec) -> dict:
    """NMSE of the configured models on fresh held-out samples."""
    data = generate_samples_parallel(spec, spec.samples, purpose="eval")
    out = {}
    if spec.channel_model:
        m = _load(spec.channel_model, "channel")
        pred = nn.predict_channel_sorted(m, data["X"])
        out["channel_nmse_db"] = float(_nmse_db(pred, data["C_sorted"], None))
    if spec.variance_model:
        m = _load(spec.variance_model, "variance")
        pred = 10.0 ** nn.predict_log_variance(m, data["X"])
        out["variance_nmse_db"] = float(_nmse_db(pred, 10.0 ** data["log_ratio"], None))
    if not out:
        raise MissingModelError("no model paths configured for eval")
    return out


def run_export(spec: ExperimentSpec, out: Path) -> dict:
    """Write each configured model's weights and scaler parameters as a plain .npz archive."""
    paths = {}
    for kind, p in (("channel", spec.channel_model), ("variance", spec.variance_model)):
        if p is None:
            continue
        m = _load(p, kind)
        arrays = {}
        for i, l in enumerate(m.layers):
            arrays[f"W{i}"], arrays[f"b{i}"] = l.W, l.b
        for name in ("corr", "gain", "target"):
            sc = getattr(m.scalers, name)
            for attr in ("mean", "std", "lo", "hi"):
                if hasattr(sc, attr):
                    arrays[f"{name}_{attr}"] = getattr(sc, attr)
        dest = Path(out) / f"{kind}_model.npz"
        _save_npz(dest, arrays, m.config_hash)
        paths[kind] = str(dest)
    if not paths:
        raise MissingModelError("no model paths configured for export")
    return paths


# ---------------------------------------------------------------- outputs

class CsvSink:
    """CSV table whose rows carry the config hash; appending to a file with another hash is refused."""

    def __init__(self, path, h: str, columns: list[str], append: bool = False):
        self.path, self.hash, self.columns = Path(path), h, ["config_hash"] + list(columns)
        if append and self.path.exists():
            with self.path.open(newline="") as f:
                reader = csv.DictReader(f)
                if reader.fieldnames != self.columns:
                    raise HashMismatchError(f"{self.path} has different columns")
                for row in reader:
                    if row["config_hash"] != h:
                        raise HashMismatchError(
                            f"{self.path} holds rows for config {row['config_hash']}, not {h}; refusing to append")
            self._mode = "a"
        else:
            self._mode = "w"

    def write(self, rows) -> None:
        with self.path.open(self._mode, newline="") as f:
            w = csv.DictWriter(f, fieldnames=self.columns, lineterminator="\n")
            if self._mode == "w":
                w.writeheader()
            for r in rows:
                w.writerow({"config_hash": self.hash, **{k: _fmt(v) for k, v in r.items()}})
        self._mode = "a"


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, np.integer):
        return int(v)
    return v


_PLOT_CDF = '''"""Empirical CDFs of {value} per {group}; generated alongside {csv}."""
import csv
import sys

import matplotlib.pyplot as plt
import numpy as np

rows = list(csv.DictReader(open(sys.argv[1] if len(sys.argv) > 1 else "{csv}")))
for name in sorted({{r["{group}"] for r in rows}}):
    x = np.sort([float(r["{value}"]) for r in rows if r["{group}"] == name])
    plt.plot(x, np.arange(1, len(x) + 1) / len(x), label=name)
plt.xlabel("{xlabel}")
plt.ylabel("CDF")
plt.legend()
plt.grid(True)
plt.savefig("{stem}.png", dpi=150)
'''

_PLOT_LINES = '''"""Median {value} per UE rank for each {group}; generated alongside {csv}."""
import csv
import sys

import matplotlib.pyplot as plt
import numpy as np

rows = list(csv.DictReader(open(sys.argv[1] if len(sys.argv) > 1 else "{csv}")))
for name in sorted({{r["{group}"] for r in rows}}):
    ranks = sorted({{int(r["ue_rank"]) for r in rows if r["{group}"] == name}})
    y = [np.median([float(r["{value}"]) for r in rows if r["{group}"] == name and int(r["ue_rank"]) == k]) for k in ranks]
    plt.semilogy([k + 1 for k in ranks], y, marker="o", label=name)
plt.xlabel("UE index (ascending SNR)")
plt.ylabel("{xlabel}")
plt.legend()
plt.grid(True)
plt.savefig("{stem}.png", dpi=150)
'''


def write_plot_script(out: Path, csv_name: str, group: str, value: str, xlabel: str, kind: str = "cdf") -> Path:
    stem = Path(csv_name).stem
    tpl = _PLOT_CDF if kind == "cdf" else _PLOT_LINES
    path = Path(out) / f"plot_{stem}.py"
    path.write_text(tpl.format(csv=csv_name, group=group, value=value, xlabel=xlabel, stem=stem))
    return path
