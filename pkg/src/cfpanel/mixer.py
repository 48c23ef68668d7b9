"""A small all-MLP mixer trained globally on pooled pre-intervention windows.

The input to the network is a ``W x C`` matrix: the target channel
(deseasonalized and shifted by its window mean) followed by one channel per
covariate. Each block standardizes every channel over time, mixes along the
time axis with weights shared across channels, then standardizes again and
mixes along the channel axis with weights shared across time steps. Both
mixes are added back residually. An affine head maps the target channel of
the last block to the ``h`` future steps. Training minimizes mean squared
error with hand-written backpropagation.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import NonFiniteObjective, UnknownUnit
from .numerics import OptimizerConfig, minimize
from .panel import PanelDataset
from .windows import build_windows, last_window, unit_profiles

__all__ = [
    "MixerConfig",
    "MixerModel",
    "fit_mixer_lite",
    "predict_mixer",
    "mixer_loss",
    "mixer_forward",
]

_EPS = 1e-5
_ACTIVATIONS = ("relu", "linear")


@dataclass(frozen=True)
class MixerConfig:
    horizon: int = 24
    season: int = 7
    window_w: int | None = None  # None -> up to 4h, at least 2 seasons, clamped to the pre-period
    n_blocks: int = 2
    hidden_mult: int = 2
    epochs: int = 80
    batch_size: int = 128
    holdout_frac: float = 0.1
    activation: str = "relu"
    init_scale: float = 0.1
    optimizer: OptimizerConfig = field(
        default_factory=lambda: OptimizerConfig(step_size=0.002, max_iters=80, patience=100)
    )

    def __post_init__(self):
        if self.n_blocks < 1:
            raise ValueError("n_blocks must be >= 1")
        if self.hidden_mult < 1:
            raise ValueError("hidden_mult must be >= 1")
        if self.activation not in _ACTIVATIONS:
            raise ValueError(f"activation must be one of {_ACTIVATIONS}")
        if self.init_scale < 0:
            raise ValueError("init_scale must be >= 0")

    def width_for(self, t0: int) -> int:
        if self.window_w is not None:
            return int(self.window_w)
        S = max(self.season, 1)
        # longer panels afford longer look-backs: 4h at most, 2 seasons at least
        W = min(4 * self.horizon, max(2 * S, t0 - self.horizon - 4 * S))
        return max(S, min(W, t0 - self.horizon - S + 1))


# ---- parameters ---------------------------------------------------------------

def _shapes(W: int, h: int, C: int, n_blocks: int, hidden_mult: int) -> dict:
    shapes = {}
    Hc = hidden_mult * C
    for b in range(n_blocks):
        shapes[f"Wt{b}"] = (W, W)
        shapes[f"bt{b}"] = (W,)
        shapes[f"Wf1{b}"] = (C, Hc)
        shapes[f"bf1{b}"] = (Hc,)
        shapes[f"Wf2{b}"] = (Hc, C)
        shapes[f"bf2{b}"] = (C,)
    shapes["Wh"] = (W, h)
    shapes["bh"] = (h,)
    return shapes


def _unpack(theta, shapes) -> dict[str, np.ndarray]:
    out, k = {}, 0
    for name, shp in shapes.items():
        n = int(np.prod(shp))
        out[name] = theta[k:k + n].reshape(shp)
        k += n
    return out


def _pack(params, shapes) -> np.ndarray:
    return np.concatenate([np.asarray(params[n], dtype=float).ravel() for n in shapes])


def _n_blocks(p) -> int:
    return sum(1 for k in p if k.startswith("Wt"))


# ---- forward / backward ---------------------------------------------------------

def _standardize(X):
    # per sample and channel, over the time axis
    m = X.mean(axis=1, keepdims=True)
    s = np.sqrt(X.var(axis=1, keepdims=True) + _EPS)
    Z = (X - m) / s
    return Z, s


def _standardize_back(dZ, Z, s):
    return (dZ - dZ.mean(axis=1, keepdims=True)
            - Z * (dZ * Z).mean(axis=1, keepdims=True)) / s


def _act(u, kind):
    return np.maximum(u, 0.0) if kind == "relu" else u


def _act_grad(u, kind):
    return (u > 0).astype(float) if kind == "relu" else np.ones_like(u)


def mixer_forward(p, X, activation: str = "relu"):
    """Map ``(n, W, C)`` inputs to ``(n, h)`` outputs; also returns the backprop cache."""
    cache = []
    for b in range(_n_blocks(p)):
        Z, s = _standardize(X)
        U = np.einsum("nwc,wv->nvc", Z, p[f"Wt{b}"]) + p[f"bt{b}"][None, :, None]
        X1 = X + _act(U, activation)
        Z2, s2 = _standardize(X1)
        V = Z2 @ p[f"Wf1{b}"] + p[f"bf1{b}"]
        A = _act(V, activation)
        X = X1 + A @ p[f"Wf2{b}"] + p[f"bf2{b}"]
        cache.append((Z, s, U, Z2, s2, V, A))
    out = X[:, :, 0] @ p["Wh"] + p["bh"]
    return out, (cache, X)


def _backward(p, cache, G, activation):
    blocks, XL = cache
    grads = {"Wh": XL[:, :, 0].T @ G, "bh": G.sum(axis=0)}
    dX = np.zeros_like(XL)
    dX[:, :, 0] = G @ p["Wh"].T
    for b in range(len(blocks) - 1, -1, -1):
        Z, s, U, Z2, s2, V, A = blocks[b]
        # feature mix
        grads[f"Wf2{b}"] = np.einsum("nwh,nwc->hc", A, dX)
        grads[f"bf2{b}"] = dX.sum(axis=(0, 1))
        dV = (dX @ p[f"Wf2{b}"].T) * _act_grad(V, activation)
        grads[f"Wf1{b}"] = np.einsum("nwc,nwh->ch", Z2, dV)
        grads[f"bf1{b}"] = dV.sum(axis=(0, 1))
        dX1 = dX + _standardize_back(dV @ p[f"Wf1{b}"].T, Z2, s2)
        # time mix
        dU = dX1 * _act_grad(U, activation)
        grads[f"Wt{b}"] = np.einsum("nwc,nvc->wv", Z, dU)
        grads[f"bt{b}"] = dU.sum(axis=(0, 2))
        dZ = np.einsum("nvc,wv->nwc", dU, p[f"Wt{b}"])
        dX = dX1 + _standardize_back(dZ, Z, s)
    return grads


def mixer_loss(theta, shapes, X, y, activation: str = "relu"):
    """Mean squared error over windows and steps, with its gradient."""
    p = _unpack(theta, shapes)
    out, cache = mixer_forward(p, X, activation)
    r = out - y
    G = 2.0 * r / r.size
    grads = _backward(p, cache, G, activation)
    return float(np.mean(r * r)), _pack(grads, shapes)


# ---- model ----------------------------------------------------------------------

@dataclass
class MixerModel:
    config: MixerConfig
    width: int
    params: dict[str, np.ndarray]
    scale: float
    profiles: np.ndarray
    unit_ids: tuple[str, ...]
    covariate_names: tuple[str, ...] = ()
    history: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "model": "mixer",
            "config": asdict(self.config),
            "width": self.width,
            "scale": self.scale,
            "unit_ids": list(self.unit_ids),
            "covariate_names": list(self.covariate_names),
            "profiles": self.profiles.tolist(),
            "params": {k: v.tolist() for k, v in self.params.items()},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MixerModel":
        cfg = dict(d["config"])
        cfg["optimizer"] = OptimizerConfig(**cfg["optimizer"])
        return cls(MixerConfig(**cfg), int(d["width"]),
                   {k: np.asarray(v, dtype=float) for k, v in d["params"].items()},
                   float(d["scale"]), np.asarray(d["profiles"], dtype=float),
                   tuple(d["unit_ids"]), tuple(d.get("covariate_names", ())))


def _inputs(x, cov, scale):
    level = x.mean(axis=-1, keepdims=True)
    target = ((x - level) / scale)[..., None]
    return np.concatenate([target, cov], axis=-1), level


def _init_params(shapes, cfg: MixerConfig, X, y, rng) -> dict[str, np.ndarray]:
    params = {}
    for name, shp in shapes.items():
        if name.startswith("b") or name in ("Wh",):
            params[name] = np.zeros(shp)
        else:
            params[name] = cfg.init_scale * rng.normal(0.0, 1.0 / np.sqrt(shp[0]), size=shp)
    # warm start: least-squares head on the (pre-block) target channel
    D = np.column_stack([X[:, :, 0], np.ones(len(X))])
    coef = np.linalg.lstsq(D, y, rcond=None)[0]
    params["Wh"], params["bh"] = coef[:-1], coef[-1]
    return params


def fit_mixer_lite(panel: PanelDataset, cfg: MixerConfig = MixerConfig()) -> MixerModel:
    """Train the mixer on every unit's pre-period windows (treated and control pooled)."""
    W, h = cfg.width_for(panel.t0), cfg.horizon
    profiles = unit_profiles(panel, cfg.season)
    ws = build_windows(panel, W, h, profiles, cfg.holdout_frac)
    level = ws.inputs.mean(axis=1, keepdims=True)
    scale = float(np.std(ws.targets - level))
    if not np.isfinite(scale) or scale <= 0:
        scale = 1.0
    X, level = _inputs(ws.inputs, ws.covariates, scale)
    y = (ws.targets - level) / scale
    train = ~ws.holdout
    val = ws.holdout if ws.holdout.any() else train
    shapes = _shapes(W, h, X.shape[2], cfg.n_blocks, cfg.hidden_mult)
    rng = np.random.default_rng(cfg.optimizer.seed)
    Xt, yt, Xv, yv = X[train], y[train], X[val], y[val]
    theta0 = _pack(_init_params(shapes, cfg, Xt, yt, rng), shapes)

    def objective(theta, idx):
        return mixer_loss(theta, shapes, Xt[idx], yt[idx], cfg.activation)

    def held_out_mse(theta):
        out, _ = mixer_forward(_unpack(theta, shapes), Xv, cfg.activation)
        return float(np.mean((out - yv) ** 2))

    opt = OptimizerConfig(**{**asdict(cfg.optimizer), "max_iters": cfg.epochs,
                             "batch_size": cfg.batch_size})
    history: list = []
    theta = minimize(objective, theta0, opt, n_samples=int(train.sum()),
                     monitor=held_out_mse, trace=history)
    if not np.all(np.isfinite(theta)):
        raise NonFiniteObjective("training produced non-finite parameters")
    params = {k: v.copy() for k, v in _unpack(theta, shapes).items()}
    return MixerModel(cfg, W, params, scale, profiles, panel.unit_ids,
                      tuple(panel.covariate_names), history)


def predict_mixer(model: MixerModel, panel: PanelDataset, unit_id: str) -> np.ndarray:
    """Point forecast of ``[t0, t0 + h)`` for one unit."""
    if unit_id not in panel.unit_ids:
        raise UnknownUnit(f"unit {unit_id!r} is not in the panel")
    cfg = model.config
    i = panel.index_of(unit_id)
    if unit_id in model.unit_ids:
        j = model.unit_ids.index(unit_id)
        prof = model.profiles[j:j + 1]
    else:
        prof = unit_profiles(panel, cfg.season)[i:i + 1]
    x, seas, cov = last_window(panel, i, model.width, cfg.horizon,
                               np.repeat(prof, len(panel.units), axis=0))
    X, level = _inputs(x[None], cov[None], model.scale)
    out, _ = mixer_forward(model.params, X, cfg.activation)
    return out[0] * model.scale + level[0] + seas
