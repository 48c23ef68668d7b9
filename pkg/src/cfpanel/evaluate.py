"""Effect estimates, forecast-error metrics and the placebo rank test.

Effects follow the sign convention observed minus counterfactual, so a
price cut shows up as a negative ATT. Forecast errors used for model
comparison are computed on control units only, since only they have an
observed untreated post-period.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np
from scipy import stats

from .errors import EmptyGroup, LengthMismatch, MissingForecast, TooShortInsample, ZeroDenominator
from .panel import PanelDataset, SimulationTruth

__all__ = [
    "smape",
    "mase",
    "EffectFragment",
    "effect_and_att",
    "relative_att",
    "WilcoxonResult",
    "placebo_test",
    "unit_mase_errors",
    "ModelReport",
    "EffectReport",
    "build_report",
    "report_to_json",
    "report_to_csv",
    "report_svg",
    "EXACT_LIMIT",
]

EXACT_LIMIT = 20  # total group size up to which the rank test is enumerated exactly


# ---- metrics --------------------------------------------------------------------

def _pair(actual, predicted):
    a = np.asarray(actual, dtype=float).ravel()
    p = np.asarray(predicted, dtype=float).ravel()
    if a.size == 0 or a.size != p.size:
        raise LengthMismatch(f"actual has {a.size} values, predicted {p.size}")
    return a, p


def smape(actual, predicted) -> float:
    """``(2/h) * sum |p - a| / (|a| + |p|)``."""
    a, p = _pair(actual, predicted)
    den = np.abs(a) + np.abs(p)
    if np.any(den == 0):
        raise ZeroDenominator("sMAPE undefined where actual and predicted are both 0")
    return float(2.0 / a.size * np.sum(np.abs(p - a) / den))


def mase(actual, predicted, insample, S: int = 1) -> float:
    """Mean absolute error scaled by the in-sample seasonal-naive MAE at lag ``S``."""
    a, p = _pair(actual, predicted)
    x = np.asarray(insample, dtype=float).ravel()
    if S < 1 or x.size <= S:
        raise TooShortInsample(f"in-sample length {x.size} must exceed S={S}")
    scale = float(np.mean(np.abs(x[S:] - x[:-S])))
    if scale == 0:
        raise ZeroDenominator("seasonal-naive in-sample error is zero")
    return float(np.mean(np.abs(p - a)) / scale)


# ---- effects --------------------------------------------------------------------

@dataclass(frozen=True)
class EffectFragment:
    per_unit_paths: dict[str, np.ndarray]
    att_path: np.ndarray
    att: float


def effect_and_att(panel: PanelDataset, forecasts: Mapping[str, np.ndarray]) -> EffectFragment:
    """Per-treated-unit effect paths, their mean path and its time average."""
    h = panel.horizon
    paths = {}
    for uid in panel.treated_ids:
        if uid not in forecasts:
            raise MissingForecast(f"no forecast for treated unit {uid!r}")
        f = np.asarray(forecasts[uid], dtype=float)
        if f.shape != (h,):
            raise LengthMismatch(f"forecast for {uid!r} has shape {f.shape}, expected ({h},)")
        paths[uid] = panel.unit(uid).values[panel.t0:] - f
    att_path = np.mean(np.vstack(list(paths.values())), axis=0)
    return EffectFragment(paths, att_path, float(att_path.mean()))


def relative_att(att: float, pre_mean: float) -> float:
    """ATT as a fraction of the treated units' mean outcome before the intervention."""
    if pre_mean == 0:
        raise ZeroDenominator("pre-intervention mean is zero")
    return float(att / pre_mean)


def treated_pre_mean(panel: PanelDataset, S: int) -> float:
    """Mean treated outcome over the last ``S`` pre-intervention steps."""
    t0 = panel.t0
    S = min(max(S, 1), t0)
    return float(panel.values[panel.treated_mask, t0 - S:t0].mean())


# ---- rank test ------------------------------------------------------------------

@dataclass(frozen=True)
class WilcoxonResult:
    u_statistic: float
    p_value: float
    method: str  # "exact" or "normal-approximation"
    n_control: int
    n_treated: int

    @property
    def passed(self) -> bool:
        return self.p_value < 0.05


def _exact_upper_p(ranks: np.ndarray, n_treated: int, observed: float) -> float:
    # distribution of the treated rank sum over all equally likely label
    # assignments; doubled midranks are integers, so a subset-sum DP is exact
    r2 = np.rint(2 * ranks).astype(int)
    top = int(r2.sum())
    # counts[k][s] = number of k-subsets with doubled rank sum s
    counts = np.zeros((n_treated + 1, top + 1), dtype=object)
    counts[0, 0] = 1
    for v in r2:
        counts[1:, v:] = counts[1:, v:] + counts[:-1, :top + 1 - v]
    dist = counts[n_treated]
    thresh = int(round(2 * observed))
    return float(sum(dist[thresh:]) / math.comb(len(ranks), n_treated))


def placebo_test(control_errors, treated_errors, exact_limit: int = EXACT_LIMIT) -> WilcoxonResult:
    """One-sided rank-sum test that treated errors are stochastically larger.

    Ties get midranks. With at most ``exact_limit`` units in total the
    p-value comes from the exact permutation distribution; otherwise from
    the normal approximation with tie and continuity corrections.
    """
    c = np.asarray(control_errors, dtype=float).ravel()
    t = np.asarray(treated_errors, dtype=float).ravel()
    if c.size == 0 or t.size == 0:
        raise EmptyGroup("both control and treated groups need at least one error")
    n1, n2 = t.size, c.size
    ranks = stats.rankdata(np.concatenate([t, c]))
    rank_sum = float(ranks[:n1].sum())
    u = rank_sum - n1 * (n1 + 1) / 2.0
    N = n1 + n2
    if N <= exact_limit:
        p = _exact_upper_p(ranks, n1, rank_sum)
        method = "exact"
    else:
        _, tie_counts = np.unique(ranks, return_counts=True)
        tie_term = float(np.sum(tie_counts ** 3 - tie_counts))
        var = n1 * n2 / 12.0 * ((N + 1) - tie_term / (N * (N - 1)))
        if var <= 0:
            p = 1.0
        else:
            z = (u - n1 * n2 / 2.0 - 0.5) / math.sqrt(var)
            p = float(stats.norm.sf(z))
        method = "normal-approximation"
    return WilcoxonResult(u, min(max(p, 0.0), 1.0), method, n2, n1)


def unit_mase_errors(panel: PanelDataset, forecasts: Mapping[str, np.ndarray], S: int) -> dict[str, float]:
    """Post-period MAE of every forecast unit scaled by its own pre-period seasonal-naive MAE."""
    out = {}
    t0 = panel.t0
    for uid, f in forecasts.items():
        row = panel.unit(uid).values
        out[uid] = mase(row[t0:], f, row[:t0], S)
    return out


# ---- reports --------------------------------------------------------------------

@dataclass
class ModelReport:
    model: str
    att: float
    att_path: np.ndarray
    relative_att: float
    smape: float
    mase: float
    placebo: WilcoxonResult
    per_unit_paths: dict[str, np.ndarray] = field(default_factory=dict)
    treated_smape: float | None = None
    true_att: float | None = None

    def to_dict(self) -> dict:
        d = {
            "model": self.model,
            "att": self.att,
            "att_path": [float(v) for v in self.att_path],
            "relative_att": self.relative_att,
            "smape": self.smape,
            "mase": self.mase,
            "p_value": self.placebo.p_value,
            "method": self.placebo.method,
            "u_statistic": self.placebo.u_statistic,
            "n_control": self.placebo.n_control,
            "n_treated": self.placebo.n_treated,
        }
        if self.treated_smape is not None:
            d["treated_smape"] = self.treated_smape
            d["true_att"] = self.true_att
        return d


@dataclass
class EffectReport:
    models: list[ModelReport]
    t0: int
    horizon: int
    season: int
    period_labels: tuple | None = None

    def model(self, name: str) -> ModelReport:
        for m in self.models:
            if m.model == name:
                return m
        raise KeyError(name)

    def to_dict(self) -> dict:
        return {
            "t0": self.t0,
            "horizon": self.horizon,
            "season": self.season,
            "models": [m.to_dict() for m in self.models],
        }


def build_report(
    panel: PanelDataset,
    model_forecasts: Mapping[str, Mapping[str, np.ndarray]],
    truth: SimulationTruth | None = None,
    S: int = 7,
) -> EffectReport:
    """ATT, control-unit sMAPE/MASE and the placebo test for every model.

    ``model_forecasts`` maps model name to ``{unit_id: point path}`` and
    must cover every unit. With ``truth`` the counterfactual sMAPE on the
    treated units is added as well.
    """
    if not model_forecasts:
        raise ValueError("need forecasts from at least one model")
    t0 = panel.t0
    pre_mean = treated_pre_mean(panel, S)
    reports = []
    for name, fc in model_forecasts.items():
        missing = [u for u in panel.unit_ids if u not in fc]
        if missing:
            raise MissingForecast(f"model {name!r} has no forecast for {missing[0]!r}")
        frag = effect_and_att(panel, fc)
        ctrl = panel.control_ids
        sm = float(np.mean([smape(panel.unit(u).values[t0:], fc[u]) for u in ctrl]))
        errs = unit_mase_errors(panel, {u: fc[u] for u in panel.unit_ids}, S)
        ms = float(np.mean([errs[u] for u in ctrl]))
        test = placebo_test([errs[u] for u in ctrl], [errs[u] for u in panel.treated_ids])
        rep = ModelReport(name, frag.att, frag.att_path, relative_att(frag.att, pre_mean),
                          sm, ms, test, frag.per_unit_paths)
        if truth is not None:
            rep.treated_smape = float(np.mean(
                [smape(truth.counterfactuals[u], fc[u]) for u in panel.treated_ids]))
            rep.true_att = truth.true_att
        reports.append(rep)
    return EffectReport(reports, t0, panel.horizon, S, panel.period_labels)


def report_to_json(report: EffectReport) -> str:
    """Stable, sorted-key JSON; identical reports give identical text."""
    return json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n"


def report_to_csv(report: EffectReport) -> str:
    """One row per model and post step: the ATT path next to the scalar summaries."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["model", "step", "att_t", "att", "smape", "mase", "p_value", "method"])
    for m in report.models:
        for k, v in enumerate(m.att_path):
            w.writerow([m.model, report.t0 + k, repr(float(v)), repr(m.att), repr(m.smape),
                        repr(m.mase), repr(m.placebo.p_value), m.placebo.method])
    return buf.getvalue()


_COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e")


def report_svg(panel: PanelDataset, model_forecasts: Mapping[str, Mapping[str, np.ndarray]],
               width: int = 640, height: int = 220) -> str:
    """Observed vs counterfactual line charts, one panel per treated unit, stacked."""
    ids = panel.treated_ids
    t0, T = panel.t0, panel.length
    pad = 30
    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" '
             f'height="{height * len(ids)}" font-family="sans-serif" font-size="10">']
    for k, uid in enumerate(ids):
        y0 = k * height
        obs = panel.unit(uid).values
        series = [("observed", np.arange(T), obs)]
        for name, fc in model_forecasts.items():
            series.append((name, np.arange(t0, T), np.asarray(fc[uid], dtype=float)))
        lo = min(float(np.min(s[2])) for s in series)
        hi = max(float(np.max(s[2])) for s in series)
        span = hi - lo or 1.0

        def xy(t, v):
            x = pad + (width - 2 * pad) * t / max(T - 1, 1)
            y = y0 + height - pad - (height - 2 * pad) * (v - lo) / span
            return f"{x:.1f},{y:.1f}"

        parts.append(f'<text x="{pad}" y="{y0 + 14}">{uid}</text>')
        xt = pad + (width - 2 * pad) * t0 / max(T - 1, 1)
        parts.append(f'<line x1="{xt:.1f}" y1="{y0 + pad}" x2="{xt:.1f}" '
                     f'y2="{y0 + height - pad}" stroke="#999" stroke-dasharray="4"/>')
        for j, (name, ts, vs) in enumerate(series):
            pts = " ".join(xy(t, v) for t, v in zip(ts, vs))
            color = "#000" if j == 0 else _COLORS[(j - 1) % len(_COLORS)]
            parts.append(f'<polyline fill="none" stroke="{color}" stroke-width="1" points="{pts}">'
                         f'<title>{name}</title></polyline>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"
