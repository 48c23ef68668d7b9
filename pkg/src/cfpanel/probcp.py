"""Global quantile forecaster trained on pooled pre-intervention windows.

One set of parameters is shared by every unit, treated and control. Each
series is deseasonalized with its own per-phase profile, cut into
stride-1 windows, and each window is shifted by its input mean. A small
Elman cell reads the window step by step; an affine head maps the final
hidden state together with the flat window features (inputs, the seasonal
profile over the target steps, covariate lags) to ``h x len(taus)``
quantiles. Training minimizes the mean pinball loss and keeps the
parameters with the best held-out CRPS.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import NonFiniteObjective, UnknownUnit
from .numerics import OptimizerConfig, check_taus, minimize, pinball_grad, pinball_loss
from .panel import PanelDataset
from .windows import WindowSet, build_windows, last_window, resolve_width, unit_profiles

__all__ = [
    "ProbCpConfig",
    "ProbCpModel",
    "QuantileForecast",
    "DEFAULT_TAUS",
    "fit_probcp_lite",
    "predict_counterfactual_quantiles",
    "probcp_loss",
]

DEFAULT_TAUS = (0.05, 0.25, 0.5, 0.75, 0.95)


@dataclass(frozen=True)
class ProbCpConfig:
    horizon: int = 24
    season: int = 7
    window_w: int | None = None  # None -> 4 * season, clamped to the pre-period
    taus: tuple[float, ...] = DEFAULT_TAUS
    hidden_size: int = 16
    epochs: int = 60
    batch_size: int = 128
    holdout_frac: float = 0.1
    optimizer: OptimizerConfig = field(
        default_factory=lambda: OptimizerConfig(step_size=0.005, max_iters=60, patience=100)
    )

    def __post_init__(self):
        if self.window_w is not None and self.window_w < self.season:
            raise ValueError(f"window_w={self.window_w} must be >= season {self.season}")
        check_taus(self.taus)
        if self.hidden_size < 0:
            raise ValueError("hidden_size must be >= 0")

    def width_for(self, t0: int) -> int:
        return resolve_width(self.window_w, self.season, self.horizon, t0, 4)


@dataclass(frozen=True)
class QuantileForecast:
    unit_id: str
    taus: tuple[float, ...]
    paths: np.ndarray  # (h, len(taus)), non-decreasing along axis 1

    @property
    def point(self) -> np.ndarray:
        """The median column (or the level closest to 0.5)."""
        k = int(np.argmin(np.abs(np.asarray(self.taus) - 0.5)))
        return self.paths[:, k]


# ---- parameter layout -------------------------------------------------------

def _shapes(cfg: ProbCpConfig, W: int, n_cov: int) -> dict[str, tuple[int, ...]]:
    h, K, H = cfg.horizon, len(cfg.taus), cfg.hidden_size
    n_feat = W + h + W * n_cov
    shapes = {"A": (n_feat, h * K), "c": (h * K,)}
    if H:
        shapes.update(Wx=(1 + n_cov, H), Wh=(H, H), b=(H,), B=(H, h * K))
    return shapes


def _unpack(theta: np.ndarray, shapes) -> dict[str, np.ndarray]:
    out, k = {}, 0
    for name, shp in shapes.items():
        n = int(np.prod(shp))
        out[name] = theta[k:k + n].reshape(shp)
        k += n
    return out


def _pack(params: dict, shapes) -> np.ndarray:
    return np.concatenate([np.asarray(params[n], dtype=float).ravel() for n in shapes])


# ---- forward / backward -----------------------------------------------------

def _features(x, seas, cov):
    # x: (n, W) level-normalized inputs; seas: (n, h); cov: (n, W, k)
    return np.concatenate([x, seas, cov.reshape(cov.shape[0], -1)], axis=1)


def _forward(p, x, seas, cov):
    n, W = x.shape
    feats = _features(x, seas, cov)
    out = feats @ p["A"] + p["c"]
    hs = None
    if "Wx" in p:
        H = p["Wh"].shape[0]
        steps = np.concatenate([x[:, :, None], cov], axis=2)  # (n, W, 1 + k)
        hs = np.zeros((n, W + 1, H))
        for t in range(W):
            hs[:, t + 1] = np.tanh(steps[:, t] @ p["Wx"] + hs[:, t] @ p["Wh"] + p["b"])
        out = out + hs[:, W] @ p["B"]
        return out, (feats, steps, hs)
    return out, (feats, None, None)


def _backward(p, cache, G):
    feats, steps, hs = cache
    grads = {"A": feats.T @ G, "c": G.sum(axis=0)}
    if "Wx" in p:
        W = steps.shape[1]
        grads["B"] = hs[:, W].T @ G
        dWx = np.zeros_like(p["Wx"])
        dWh = np.zeros_like(p["Wh"])
        db = np.zeros_like(p["b"])
        dh = G @ p["B"].T
        for t in range(W, 0, -1):
            da = dh * (1.0 - hs[:, t] ** 2)
            dWx += steps[:, t - 1].T @ da
            dWh += hs[:, t - 1].T @ da
            db += da.sum(axis=0)
            dh = da @ p["Wh"].T
        grads.update(Wx=dWx, Wh=dWh, b=db)
    return grads


def probcp_loss(theta, shapes, x, seas, cov, y, taus):
    """Mean pinball loss over windows, steps and quantile levels, with gradient.

    ``y`` is ``(n, h)``; predictions are laid out step-major as ``(n, h, K)``.
    """
    p = _unpack(theta, shapes)
    out, cache = _forward(p, x, seas, cov)
    n, h = y.shape
    K = len(taus)
    q = out.reshape(n, h, K)
    taus = np.asarray(taus)
    loss = pinball_loss(y[:, :, None], q, taus)
    G = pinball_grad(y[:, :, None], q, taus).reshape(n, h * K) / loss.size
    grads = _backward(p, cache, G)
    return float(loss.mean()), _pack(grads, shapes)


# ---- model ------------------------------------------------------------------

@dataclass
class ProbCpModel:
    config: ProbCpConfig
    width: int
    params: dict[str, np.ndarray]
    scale: float
    profiles: np.ndarray
    unit_ids: tuple[str, ...]
    covariate_names: tuple[str, ...] = ()
    history: list = field(default_factory=list)

    def to_dict(self) -> dict:
        cfg = asdict(self.config)
        return {
            "model": "probcp",
            "config": cfg,
            "width": self.width,
            "scale": self.scale,
            "unit_ids": list(self.unit_ids),
            "covariate_names": list(self.covariate_names),
            "profiles": self.profiles.tolist(),
            "params": {k: v.tolist() for k, v in self.params.items()},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ProbCpModel":
        cfg = dict(d["config"])
        cfg["optimizer"] = OptimizerConfig(**cfg["optimizer"])
        cfg["taus"] = tuple(cfg["taus"])
        return cls(ProbCpConfig(**cfg), int(d["width"]), {k: np.asarray(v, dtype=float) for k, v in d["params"].items()},
                   float(d["scale"]), np.asarray(d["profiles"], dtype=float),
                   tuple(d["unit_ids"]), tuple(d.get("covariate_names", ())))


def _normalized(ws: WindowSet, scale: float):
    level = ws.inputs.mean(axis=1, keepdims=True)
    return (ws.inputs - level) / scale, ws.seasonal / scale, ws.covariates, (ws.targets - level) / scale


def _init_params(shapes, rng) -> dict[str, np.ndarray]:
    params = {}
    for name, shp in shapes.items():
        if name in ("A", "c", "b"):
            params[name] = np.zeros(shp)
        else:
            params[name] = rng.normal(0.0, 0.5 / np.sqrt(shp[0]), size=shp)
    return params


def fit_probcp_lite(panel: PanelDataset, cfg: ProbCpConfig = ProbCpConfig()) -> ProbCpModel:
    """Train the shared quantile model on every unit's pre-period windows."""
    W, h = cfg.width_for(panel.t0), cfg.horizon
    profiles = unit_profiles(panel, cfg.season)
    ws = build_windows(panel, W, h, profiles, cfg.holdout_frac)
    level = ws.inputs.mean(axis=1, keepdims=True)
    scale = float(np.std(ws.targets - level))
    if not np.isfinite(scale) or scale <= 0:
        scale = 1.0
    x, seas, cov, y = _normalized(ws, scale)
    train = ~ws.holdout
    val = ws.holdout if ws.holdout.any() else train
    taus = np.asarray(cfg.taus)
    shapes = _shapes(cfg, W, cov.shape[2])
    rng = np.random.default_rng(cfg.optimizer.seed)
    theta0 = _pack(_init_params(shapes, rng), shapes)

    xt, st, ct, yt = x[train], seas[train], cov[train], y[train]
    xv, sv, cv, yv = x[val], seas[val], cov[val], y[val]

    def objective(theta, idx):
        return probcp_loss(theta, shapes, xt[idx], st[idx], ct[idx], yt[idx], taus)

    def held_out_crps(theta):
        out, _ = _forward(_unpack(theta, shapes), xv, sv, cv)
        q = np.sort(out.reshape(len(yv), h, len(taus)), axis=2)
        return 2.0 * float(np.mean(pinball_loss(yv[:, :, None], q, taus)))

    opt = cfg.optimizer
    opt = OptimizerConfig(**{**asdict(opt), "max_iters": cfg.epochs, "batch_size": cfg.batch_size})
    history: list = []
    theta = minimize(objective, theta0, opt, n_samples=int(train.sum()),
                     monitor=held_out_crps, trace=history)
    if not np.all(np.isfinite(theta)):
        raise NonFiniteObjective("training produced non-finite parameters")
    params = {k: v.copy() for k, v in _unpack(theta, shapes).items()}
    return ProbCpModel(cfg, W, params, scale, profiles, panel.unit_ids,
                       tuple(panel.covariate_names), history)


def predict_counterfactual_quantiles(model: ProbCpModel, panel: PanelDataset, unit_id: str) -> QuantileForecast:
    """One direct multi-step forecast of ``[t0, t0 + h)`` from the last pre-period window."""
    if unit_id not in panel.unit_ids:
        raise UnknownUnit(f"unit {unit_id!r} is not in the panel")
    cfg = model.config
    W, h, K = model.width, cfg.horizon, len(cfg.taus)
    i = panel.index_of(unit_id)
    if unit_id in model.unit_ids:
        profiles = model.profiles
        row = model.unit_ids.index(unit_id)
        prof = profiles[row:row + 1]
    else:
        prof = unit_profiles(panel, cfg.season)[i:i + 1]
    x, seas, cov = last_window(panel, i, W, h, np.repeat(prof, len(panel.units), axis=0))
    level = x.mean()
    out, _ = _forward(model.params, ((x - level) / model.scale)[None],
                      (seas / model.scale)[None], cov[None])
    q = out.reshape(h, K) * model.scale + level + seas[:, None]
    return QuantileForecast(unit_id, tuple(cfg.taus), np.sort(q, axis=1))
