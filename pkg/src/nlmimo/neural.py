"""Fully-connected feedforward networks written directly in numpy.

Two estimators share one feature vector per BS antenna: the channel net maps
it to the K effective channel entries of that antenna, the variance net to
the log10 of the normalized distortion variance.
"""

from __future__ import annotations

import base64
import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

__all__ = [
    "Layer",
    "MlpModel",
    "StandardScaler",
    "MinMaxScaler",
    "Scalers",
    "TrainConfig",
    "TrainResult",
    "Adam",
    "init_mlp",
    "forward",
    "backward",
    "mse_loss",
    "build_features",
    "pack_complex",
    "unpack_complex",
    "permute_users",
    "unpermute_users",
    "trim_outliers",
    "train_network",
    "train_channel_net",
    "train_variance_net",
    "predict_channel",
    "predict_channel_sorted",
    "normalize_inputs",
    "predict_log_variance",
    "save_model",
    "load_model",
    "FORMAT_VERSION",
]

log = logging.getLogger(__name__)

FORMAT_VERSION = 1
_ACTS = ("relu", "linear")


@dataclass
class Layer:
    W: np.ndarray  # (out, in)
    b: np.ndarray  # (out,)
    activation: str

    def __post_init__(self):
        if self.activation not in _ACTS:
            raise ValueError(f"activation must be one of {_ACTS}")
        if self.W.ndim != 2 or self.b.shape != (self.W.shape[0],):
            raise ValueError("bias length must equal the weight row count")


@dataclass
class StandardScaler:
    mean: np.ndarray
    std: np.ndarray
    degenerate: np.ndarray

    @classmethod
    def fit(cls, X) -> "StandardScaler":
        X = np.asarray(X, dtype=float)
        if X.shape[0] == 0:
            raise ValueError("cannot fit a scaler on an empty dataset")
        mean, std = X.mean(axis=0), X.std(axis=0)
        deg = std <= 1e-12 * np.maximum(1.0, np.abs(mean))
        if np.any(deg):
            log.warning("zero-variance features %s left unscaled", np.flatnonzero(deg).tolist())
        return cls(mean, np.where(deg, 1.0, std), deg)

    def transform(self, X):
        return (X - self.mean) / self.std

    def inverse(self, Z):
        return Z * self.std + self.mean


@dataclass
class MinMaxScaler:
    lo: np.ndarray
    hi: np.ndarray
    out_lo: float
    out_hi: float
    degenerate: np.ndarray

    @classmethod
    def fit(cls, X, out_range=(0.1, 0.9)) -> "MinMaxScaler":
        X = np.asarray(X, dtype=float)
        if X.shape[0] == 0:
            raise ValueError("cannot fit a scaler on an empty dataset")
        lo, hi = X.min(axis=0), X.max(axis=0)
        deg = (hi - lo) <= 1e-12 * np.maximum(1.0, np.abs(hi))
        if np.any(deg):
            log.warning("constant features %s left unscaled", np.flatnonzero(deg).tolist())
        return cls(lo, np.where(deg, lo + 1.0, hi), float(out_range[0]), float(out_range[1]), deg)

    def _scale(self):
        return (self.out_hi - self.out_lo) / (self.hi - self.lo)

    def transform(self, X):
        return np.where(self.degenerate, X, (X - self.lo) * self._scale() + self.out_lo)

    def inverse(self, Z):
        return np.where(self.degenerate, Z, (Z - self.out_lo) / self._scale() + self.lo)


@dataclass
class Scalers:
    """Input scalers (pilot correlations, gains) and the output scaler."""

    corr: StandardScaler
    gain: MinMaxScaler
    target: StandardScaler | MinMaxScaler

    def inputs(self, X):
        n = self.corr.mean.shape[0]
        return np.concatenate([self.corr.transform(X[:, :n]), self.gain.transform(X[:, n:])], axis=1)


@dataclass
class MlpModel:
    layers: list
    scalers: Scalers | None = None
    kind: str = "generic"
    config_hash: str = ""
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        for a, b in zip(self.layers, self.layers[1:]):
            if a.W.shape[0] != b.W.shape[1]:
                raise ValueError("layer dimensions do not chain")

    @property
    def dims(self) -> list[int]:
        return [self.layers[0].W.shape[1]] + [l.W.shape[0] for l in self.layers]

    def params(self) -> list[np.ndarray]:
        out = []
        for l in self.layers:
            out += [l.W, l.b]
        return out


def init_mlp(dims, output_activation: str, rng: np.random.Generator, dtype=np.float64) -> MlpModel:
    """Glorot-uniform weights, zero biases, ReLU hidden layers."""
    layers = []
    for i, (n_in, n_out) in enumerate(zip(dims[:-1], dims[1:])):
        lim = math.sqrt(6.0 / (n_in + n_out))
        W = rng.uniform(-lim, lim, size=(n_out, n_in)).astype(dtype)
        act = output_activation if i == len(dims) - 2 else "relu"
        layers.append(Layer(W, np.zeros(n_out, dtype=dtype), act))
    return MlpModel(layers)


def forward(model: MlpModel, X, cache: bool = False):
    """r_p = act_p(W_p r_{p-1} + b_p) on a batch X (N, n_in); optionally returns the layer inputs/pre-activations."""
    X = np.asarray(X)
    if X.ndim != 2 or X.shape[1] != model.dims[0]:
        raise ValueError(f"expected input of width {model.dims[0]}, got shape {X.shape}")
    r = X.astype(model.layers[0].W.dtype, copy=False)
    stash = []
    for l in model.layers:
        pre = r @ l.W.T + l.b
        stash.append((r, pre))
        r = np.maximum(pre, 0) if l.activation == "relu" else pre
    return (r, stash) if cache else r


def mse_loss(pred, target) -> float:
    return float(np.mean((pred - target) ** 2))


def backward(model: MlpModel, stash, pred, target) -> list[np.ndarray]:
    """Gradients of the batch-mean MSE (mean over samples and outputs), ordered as ``model.params()``."""
    delta = 2.0 * (pred - target) / pred.size
    pairs = []
    for l, (r_in, pre) in zip(reversed(model.layers), reversed(stash)):
        if l.activation == "relu":
            delta = delta * (pre > 0)
        pairs.append((delta.T @ r_in, delta.sum(axis=0)))
        delta = delta @ l.W
    return [g for pair in reversed(pairs) for g in pair]


class Adam:
    """Adam with bias correction; updates parameter arrays in place."""

    def __init__(self, params, lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, grads) -> None:
        self.t += 1
        c1 = 1 - self.beta1**self.t
        c2 = 1 - self.beta2**self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= self.beta1
            m += (1 - self.beta1) * g
            v *= self.beta2
            v += (1 - self.beta2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


# ---------------------------------------------------------------- features

def pack_complex(z) -> np.ndarray:
    """(..., K) complex -> (..., 2K) real as [Re_1, Im_1, Re_2, Im_2, ...]."""
    z = np.asarray(z)
    return np.stack([z.real, z.imag], axis=-1).reshape(z.shape[:-1] + (2 * z.shape[-1],))


def unpack_complex(x) -> np.ndarray:
    x = np.asarray(x)
    x = x.reshape(x.shape[:-1] + (x.shape[-1] // 2, 2))
    return x[..., 0] + 1j * x[..., 1]


def permute_users(x, perm):
    """Reorder the last (user) axis of ``x`` by ``perm`` (same leading shape)."""
    return np.take_along_axis(np.asarray(x), perm, axis=-1)


def unpermute_users(x, perm):
    out = np.empty_like(np.asarray(x))
    np.put_along_axis(out, perm, x, axis=-1)
    return out


def build_features(yp, phi, gains):
    """Per-antenna feature vectors and the gain-sorting permutation.

    Parameters
    ----------
    yp : (..., M, tau) received pilots
    phi : (tau, K) pilot book used for despreading
    gains : (..., M, K) sqrt((beta_k + |g_bar_km|^2) eta_k / sigma2)

    Returns
    -------
    X : (..., M, 3K) features with users sorted by descending gain
    perm : (..., M, K) with X's user j being original user perm[j]
    """
    corr = np.asarray(yp) @ np.conj(np.asarray(phi))
    gains = np.broadcast_to(np.asarray(gains, dtype=float), corr.shape)
    perm = np.argsort(-gains, axis=-1, kind="stable")
    X = np.concatenate([pack_complex(permute_users(corr, perm)), permute_users(gains, perm)], axis=-1)
    return X, perm


def trim_outliers(targets, fraction: float) -> np.ndarray:
    """Boolean mask keeping samples whose target norm is within the (1 - fraction) quantile."""
    t = np.asarray(targets).reshape(len(targets), -1)
    norms = np.linalg.norm(t, axis=1)
    if fraction <= 0:
        return np.ones(len(t), dtype=bool)
    return norms <= np.quantile(norms, 1.0 - fraction)


# ---------------------------------------------------------------- training

@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    batch_size: int = 1000
    max_epochs: int = 50
    patience: int = 5
    hidden_factor: int = 30
    hidden_layers: int = 2
    outlier_fraction: float = 0.005
    validation_fraction: float = 0.1
    dtype: str = "float32"
    gain_normalize: bool = True
    seed: int = 0

    def __post_init__(self):
        if min(self.batch_size, self.max_epochs, self.patience, self.hidden_factor, self.hidden_layers) < 1:
            raise ValueError("sizes must be positive")
        if self.patience > self.max_epochs:
            raise ValueError("patience cannot exceed the epoch budget")
        if not 0 < self.validation_fraction < 1:
            raise ValueError("validation_fraction must lie in (0, 1)")

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        return cls(**d)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class TrainResult:
    model: MlpModel
    train_loss: list
    val_loss: list
    best_epoch: int
    stopped_early: bool


def train_network(model: MlpModel, X_tr, T_tr, X_va, T_va, cfg: TrainConfig) -> TrainResult:
    """Mini-batch Adam on scaled arrays with early stopping; restores the best-validation weights."""
    rng = np.random.default_rng(cfg.seed)
    dt = model.layers[0].W.dtype
    X_tr, T_tr = X_tr.astype(dt), T_tr.astype(dt)
    X_va, T_va = X_va.astype(dt), T_va.astype(dt)
    opt = Adam(model.params(), lr=cfg.learning_rate)
    best = math.inf
    best_params = [p.copy() for p in model.params()]
    best_epoch, wait, stopped = 0, 0, False
    tr_hist, va_hist = [], []
    n = len(X_tr)
    for epoch in range(cfg.max_epochs):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            pred, stash = forward(model, X_tr[idx], cache=True)
            total += float(np.sum((pred - T_tr[idx]) ** 2))
            opt.step(backward(model, stash, pred, T_tr[idx]))
        tr_hist.append(total / T_tr.size)
        val = mse_loss(forward(model, X_va), T_va)
        va_hist.append(val)
        if not math.isfinite(val):
            raise FloatingPointError(f"validation loss diverged at epoch {epoch}: train losses {tr_hist[-3:]}")
        log.info("epoch %d train %.4g val %.4g", epoch, tr_hist[-1], val)
        if val < best:
            best, best_epoch, wait = val, epoch, 0
            best_params = [p.copy() for p in model.params()]
        else:
            wait += 1
            if wait >= cfg.patience:
                stopped = True
                break
    for p, q in zip(model.params(), best_params):
        p[...] = q
    return TrainResult(model, tr_hist, va_hist, best_epoch, stopped)


def _split(n, frac, rng):
    order = rng.permutation(n)
    n_va = max(1, int(round(n * frac)))
    return order[n_va:], order[:n_va]


def _gain_columns(X):
    K = X.shape[-1] // 3
    return np.repeat(X[..., 2 * K:], 2, axis=-1)


def normalize_inputs(X, gain_normalize: bool):
    """Optionally divide each user's pilot correlations by that user's gain feature."""
    X = np.asarray(X, dtype=float)
    if not gain_normalize:
        return X
    K = X.shape[-1] // 3
    out = X.copy()
    out[..., :2 * K] /= _gain_columns(X)
    return out


def _fit_and_train(X, T, target_scaler, out_act, cfg: TrainConfig, kind: str, config_hash: str):
    X = normalize_inputs(X, cfg.gain_normalize)
    T = np.asarray(T, dtype=float)
    keep = trim_outliers(T, cfg.outlier_fraction)
    X, T = X[keep], T[keep]
    rng = np.random.default_rng(cfg.seed)
    tr, va = _split(len(X), cfg.validation_fraction, rng)
    K = X.shape[1] // 3
    scalers = Scalers(StandardScaler.fit(X[tr, :2 * K]), MinMaxScaler.fit(X[tr, 2 * K:]), target_scaler(T[tr]))
    Xs = scalers.inputs(X)
    Ts = scalers.target.transform(T)
    width = cfg.hidden_factor * K
    dims = [3 * K] + [width] * cfg.hidden_layers + [T.shape[1]]
    model = init_mlp(dims, out_act, rng, dtype=np.dtype(cfg.dtype))
    model.scalers, model.kind, model.config_hash = scalers, kind, config_hash
    res = train_network(model, Xs[tr], Ts[tr], Xs[va], Ts[va], cfg)
    model.meta = {"gain_normalize": cfg.gain_normalize, "best_epoch": res.best_epoch, "val_loss": res.val_loss[res.best_epoch],
                  "train_samples": int(len(tr)), "val_samples": int(len(va))}
    return res


def train_channel_net(X, C_sorted, cfg: TrainConfig, config_hash: str = "") -> TrainResult:
    """Channel net: features (N, 3K) -> gain-sorted effective channels (N, K) complex."""
    T = pack_complex(C_sorted)
    if cfg.gain_normalize:
        T = T / _gain_columns(np.asarray(X, dtype=float))
    return _fit_and_train(X, T, StandardScaler.fit, "linear", cfg, "channel", config_hash)


def train_variance_net(X, log_ratio, cfg: TrainConfig, config_hash: str = "") -> TrainResult:
    """Variance net: features (N, 3K) -> log10([C_mumu]_mm / sigma2) (N,).

    The output scaler maps the training range onto [0, 1], so the ReLU floor
    corresponds to the smallest training target, itself >= 0.
    """
    T = np.asarray(log_ratio, dtype=float).reshape(-1, 1)
    return _fit_and_train(X, T, lambda t: MinMaxScaler.fit(t, (0.0, 1.0)), "relu", cfg, "variance", config_hash)


def _predict(model: MlpModel, X):
    X = normalize_inputs(X, model.meta.get("gain_normalize", False))
    lead = X.shape[:-1]
    Z = forward(model, model.scalers.inputs(X.reshape(-1, X.shape[-1])))
    return model.scalers.target.inverse(Z.astype(float)).reshape(lead + (-1,))


def predict_channel(model: MlpModel, X, perm) -> np.ndarray:
    """Effective-channel estimates in the original user order, (..., K)."""
    if model.kind != "channel":
        raise ValueError("not a channel model")
    return unpermute_users(predict_channel_sorted(model, X), perm)


def predict_channel_sorted(model: MlpModel, X) -> np.ndarray:
    """Effective-channel estimates in gain-sorted order, (..., K)."""
    out = _predict(model, X)
    if model.meta.get("gain_normalize", False):
        out = out * _gain_columns(np.asarray(X, dtype=float))
    return unpack_complex(out)


def predict_log_variance(model: MlpModel, X) -> np.ndarray:
    """log10 of the normalized distortion variance, (...)."""
    if model.kind != "variance":
        raise ValueError("not a variance model")
    return _predict(model, X)[..., 0]


# ---------------------------------------------------------------- serialization

def _enc(a) -> dict:
    a = np.ascontiguousarray(a, dtype="<f8")
    return {"shape": list(a.shape), "data": base64.b64encode(a.tobytes()).decode("ascii")}


def _dec(d) -> np.ndarray:
    return np.frombuffer(base64.b64decode(d["data"]), dtype="<f8").reshape(d["shape"]).copy()


def _scaler_to_dict(s):
    if isinstance(s, StandardScaler):
        return {"type": "standard", "mean": _enc(s.mean), "std": _enc(s.std), "degenerate": s.degenerate.tolist()}
    return {"type": "minmax", "lo": _enc(s.lo), "hi": _enc(s.hi), "out_range": [s.out_lo, s.out_hi],
            "degenerate": s.degenerate.tolist()}


def _scaler_from_dict(d):
    deg = np.asarray(d["degenerate"], dtype=bool)
    if d["type"] == "standard":
        return StandardScaler(_dec(d["mean"]), _dec(d["std"]), deg)
    return MinMaxScaler(_dec(d["lo"]), _dec(d["hi"]), d["out_range"][0], d["out_range"][1], deg)


def save_model(model: MlpModel, path) -> None:
    """JSON container; arrays are base64 little-endian float64, row-major."""
    doc = {
        "format": "nlmimo-mlp",
        "version": FORMAT_VERSION,
        "endianness": "little",
        "kind": model.kind,
        "config_hash": model.config_hash,
        "dims": model.dims,
        "layers": [{"activation": l.activation, "W": _enc(l.W), "b": _enc(l.b)} for l in model.layers],
        "scalers": None if model.scalers is None else {
            "corr": _scaler_to_dict(model.scalers.corr),
            "gain": _scaler_to_dict(model.scalers.gain),
            "target": _scaler_to_dict(model.scalers.target),
        },
        "meta": model.meta,
    }
    Path(path).write_text(json.dumps(doc, indent=1))


def load_model(path) -> MlpModel:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"model file {path} not found")
    doc = json.loads(path.read_text())
    if doc.get("format") != "nlmimo-mlp":
        raise ValueError(f"{path} is not a model container")
    if doc["version"] > FORMAT_VERSION:
        raise ValueError(f"model format version {doc['version']} is newer than supported {FORMAT_VERSION}")
    layers = [Layer(_dec(l["W"]), _dec(l["b"]), l["activation"]) for l in doc["layers"]]
    sc = doc["scalers"]
    scalers = None if sc is None else Scalers(*(_scaler_from_dict(sc[k]) for k in ("corr", "gain", "target")))
    model = MlpModel(layers, scalers, doc["kind"], doc["config_hash"], doc.get("meta", {}))
    if model.dims != doc["dims"]:
        raise ValueError("stored dims disagree with the weight shapes")
    return model
