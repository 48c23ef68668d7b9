"""Fit any of the four estimators on a panel and forecast every unit's post-period.

Control units get forecasts too: they are what the control-only error
metrics and the placebo test compare against. The global models forecast
controls from the same shared fit; the local models treat each control
as a pseudo-treated unit with the remaining controls as donors.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields
from typing import Any, Mapping

import numpy as np

from .arima import DEFAULT_ORDER_GRID, fit_carima, forecast_arima
from .errors import TooShort, UnknownModel
from .local import DEFAULT_LAMBDA_GRID, fit_ascm, ridge_loo_error
from .mixer import MixerConfig, fit_mixer_lite, predict_mixer
from .numerics import OptimizerConfig
from .panel import PanelDataset, deseasonalize, seasonal_profile, tile_profile
from .probcp import ProbCpConfig, fit_probcp_lite, predict_counterfactual_quantiles

__all__ = [
    "MODELS",
    "CounterfactualForecast",
    "ModelFit",
    "fit_model",
    "select_lambda",
    "quantile_column",
]

MODELS = ("probcp", "mixer", "ascm", "carima")


@dataclass(frozen=True)
class CounterfactualForecast:
    unit_id: str
    point: np.ndarray
    taus: tuple[float, ...] = ()
    quantiles: np.ndarray | None = None  # (h, len(taus))


@dataclass
class ModelFit:
    name: str
    forecasts: dict[str, CounterfactualForecast]
    # JSON-ready parameter documents: one for a global model, one per treated unit otherwise
    payloads: dict[str, dict] = field(default_factory=dict)

    def points(self) -> dict[str, np.ndarray]:
        return {u: f.point for u, f in self.forecasts.items()}


def quantile_column(tau: float) -> str:
    return f"q{round(tau * 100):02d}"


def _dataclass_from(cls, cfg: Mapping[str, Any] | None, **defaults):
    cfg = dict(cfg or {})
    known = {f.name for f in fields(cls)}
    unknown = set(cfg) - known
    if unknown:
        raise ValueError(f"unknown {cls.__name__} keys: {sorted(unknown)}")
    if isinstance(cfg.get("optimizer"), Mapping):
        cfg["optimizer"] = OptimizerConfig(**cfg["optimizer"])
    if "taus" in cfg:
        cfg["taus"] = tuple(cfg["taus"])
    return cls(**{**defaults, **cfg})


def _fit_probcp(panel, cfg, season):
    config = _dataclass_from(ProbCpConfig, cfg, horizon=panel.horizon, season=season)
    model = fit_probcp_lite(panel, config)
    out = {}
    for uid in panel.unit_ids:
        q = predict_counterfactual_quantiles(model, panel, uid)
        out[uid] = CounterfactualForecast(uid, q.point, q.taus, q.paths)
    return ModelFit("probcp", out, {"model": model.to_dict()})


def _fit_mixer(panel, cfg, season):
    config = _dataclass_from(MixerConfig, cfg, horizon=panel.horizon, season=season)
    model = fit_mixer_lite(panel, config)
    out = {uid: CounterfactualForecast(uid, predict_mixer(model, panel, uid)) for uid in panel.unit_ids}
    return ModelFit("mixer", out, {"model": model.to_dict()})


def select_lambda(controls_pre: np.ndarray, controls_post: np.ndarray, grid=DEFAULT_LAMBDA_GRID) -> float:
    """Leave-one-control-out choice of the ridge penalty; depends on the controls only."""
    X0, Y0 = controls_pre.T, controls_post.T
    grid = [float(v) for v in grid]
    cv = {v: ridge_loo_error(X0, Y0, v) for v in grid}
    return min(grid, key=lambda v: (cv[v], v))


def _fit_ascm(panel, cfg, season):
    cfg = dict(cfg or {})
    grid = tuple(cfg.pop("lambda_grid", DEFAULT_LAMBDA_GRID))
    if cfg:
        raise ValueError(f"unknown ascm keys: {sorted(cfg)}")
    t0 = panel.t0
    V = panel.values
    ctrl = np.flatnonzero(~panel.treated_mask)
    ids = panel.unit_ids
    lam = select_lambda(V[ctrl, :t0].T, V[ctrl, t0:].T, grid)
    out, payloads = {}, {}
    for i, uid in enumerate(ids):
        donors = ctrl[ctrl != i]
        model = fit_ascm(V[i, :t0], V[donors, :t0].T, V[donors, t0:].T,
                         donor_ids=[ids[j] for j in donors], lam=lam)
        out[uid] = CounterfactualForecast(uid, model.predict(V[donors, t0:].T))
        if panel.treated_mask[i]:
            payloads[uid] = {"model": "ascm", "unit_id": uid, **model.to_dict()}
    return ModelFit("ascm", out, payloads)


def _fit_carima(panel, cfg, season):
    cfg = dict(cfg or {})
    grid = [tuple(o) for o in cfg.pop("order_grid", DEFAULT_ORDER_GRID)]
    use_cov = bool(cfg.pop("use_covariates", False))
    if cfg:
        raise ValueError(f"unknown carima keys: {sorted(cfg)}")
    t0, h = panel.t0, panel.horizon
    names = panel.covariate_names if use_cov else []
    out, payloads = {}, {}
    for uid in panel.unit_ids:
        unit = panel.unit(uid)
        pre = unit.values[:t0]
        # seasonality is removed upstream; the ARIMA grid has no seasonal terms
        prof = seasonal_profile(pre, season) if season > 1 and pre.size >= season else np.zeros(1)
        des = deseasonalize(pre, prof)
        covs = np.column_stack([unit.covariates[n] for n in names]) if names else None
        try:
            model = fit_carima(des, grid, covariates=None if covs is None else covs[:t0])
        except TooShort as exc:
            raise TooShort(f"unit {uid!r}: {exc}") from None
        f = forecast_arima(model, des, h,
                           covariates_pre=None if covs is None else covs[:t0])
        out[uid] = CounterfactualForecast(uid, f + tile_profile(prof, t0, h))
        if panel.treated_mask[panel.index_of(uid)]:
            payloads[uid] = {"model": "carima", "unit_id": uid, "season": season,
                             "profile": prof.tolist(), **model.to_dict()}
    return ModelFit("carima", out, payloads)


_FITTERS = {"probcp": _fit_probcp, "mixer": _fit_mixer, "ascm": _fit_ascm, "carima": _fit_carima}


def fit_model(panel: PanelDataset, name: str, config: Mapping[str, Any] | None = None,
              season: int = 7) -> ModelFit:
    """Fit ``name`` (one of :data:`MODELS`) and forecast ``[t0, T)`` for every unit."""
    try:
        fitter = _FITTERS[name]
    except KeyError:
        raise UnknownModel(f"unknown model {name!r}; expected one of {', '.join(MODELS)}") from None
    return fitter(panel, config, season)
