"""End-to-end acceptance checks, one test per criterion.

Each test prints a single ``PASS``/``FAIL`` line (visible even when pytest
captures output) and then asserts the same condition. Expensive model fits
are shared between criteria through module-scoped fixtures.
"""

from __future__ import annotations

import json
import math
import time

import numpy as np
import pytest

from cfpanel.arima import ArimaModel, forecast_arima
from cfpanel.cli import main
from cfpanel.evaluate import build_report, mase, placebo_test, relative_att, report_to_json, smape
from cfpanel.fixtures import REFERENCE_ATT, TREATED_PRE_MEAN, fixture_paths
from cfpanel.local import fit_sc
from cfpanel.mixer import _pack as mixer_pack, _shapes as mixer_shapes, mixer_loss
from cfpanel.numerics import ridge_solve
from cfpanel.pipeline import MODELS, fit_model
from cfpanel.probcp import ProbCpConfig, _pack as probcp_pack, _shapes as probcp_shapes, probcp_loss
from cfpanel.synthgen import (
    InterventionSpec,
    SynthConfig,
    _unit_rng,
    generate_scenario_grid,
    generate_series,
    gp_covariance,
    sample_gp_beta0,
    simulate,
)

SEASON = 7
SEEDS_ATT = range(20)
SEEDS_PLACEBO = range(10)
SEEDS_ORDER = range(10)


def _verdict(capsys, number: int, ok: bool, detail: str) -> None:
    with capsys.disabled():
        print(f"\n{'PASS' if ok else 'FAIL'} criterion {number}: {detail}")


def _treated_smape(scenario, points) -> float:
    cf = scenario.truth.counterfactuals
    return float(np.mean([smape(cf[u], points[u]) for u in scenario.panel.treated_ids]))


# ---- shared fits ----------------------------------------------------------------------

@pytest.fixture(scope="module")
def intervention_fits():
    """``{seed: (scenario, {model: points})}`` for stationary 50 x 90 panels."""
    out = {}
    start = time.perf_counter()
    for seed in SEEDS_ATT:
        sc = simulate(SynthConfig(seed=seed))
        models = ("probcp", "ascm", "carima") + (("mixer",) if seed in SEEDS_PLACEBO else ())
        out[seed] = (sc, {m: fit_model(sc.panel, m, season=SEASON).points() for m in models})
    return out, time.perf_counter() - start


@pytest.fixture(scope="module")
def null_fits():
    out = {}
    for seed in SEEDS_PLACEBO:
        sc = simulate(SynthConfig(seed=seed), InterventionSpec.null())
        out[seed] = (sc, {m: fit_model(sc.panel, m, season=SEASON).points() for m in MODELS})
    return out


# ---- 1. metric oracles ------------------------------------------------------------------

def test_criterion_1_metric_oracles(capsys):
    start = time.perf_counter()
    s = smape([100, 100], [110, 90])
    s_oracle = 10 / 210 + 10 / 190
    m = mase([10, 10], [12, 8], [1, 2, 3, 4, 5, 6], S=1)
    p = placebo_test([1, 2, 3], [4, 5, 6]).p_value
    p_oracle = 1 / math.comb(6, 3)
    elapsed = time.perf_counter() - start
    ok = (abs(s - s_oracle) <= 1e-9 and abs(s - 0.100250626566) <= 1e-9
          and m == 2.0 and p == p_oracle == 0.05 and elapsed < 1.0)
    _verdict(capsys, 1, ok, f"smape={s:.12f} mase={m} exact p={p} ({elapsed * 1e3:.1f} ms)")
    assert ok


# ---- 2. generator fidelity ---------------------------------------------------------------

def test_criterion_2_generator_fidelity(capsys):
    cfg = SynthConfig(length=90, seed=11)
    unit = 4
    # replay the unit's random stream to freeze its coefficients
    rng = _unit_rng(cfg, unit)
    beta0 = sample_gp_beta0(cfg.length, rng)
    betas = rng.uniform(5.0, 10.0, size=(3, cfg.length))
    series = generate_series(cfg, unit)
    chosen = [1, 2, 7, 13, 29, 30, 31, 45, 66, 90]
    hand = [100 + beta0[t - 1]
            + betas[0, t - 1] * math.sin(2 * math.pi * t / 1)
            + betas[1, t - 1] * math.sin(2 * math.pi * t / 7)
            + betas[2, t - 1] * math.sin(2 * math.pi * t / 30) for t in chosen]
    err_series = max(abs(series[t - 1] - v) for t, v in zip(chosen, hand))

    flat = generate_series(SynthConfig(length=420, seed=2), 0)
    trended = generate_series(SynthConfig(length=420, seed=2, trend=True), 0)
    err_trend = abs(trended[-1] / flat[-1] - 1.00005 ** 420)

    cov = gp_covariance(40)
    t1, t2 = np.meshgrid(np.arange(1, 41), np.arange(1, 41), indexing="ij")
    lag = np.abs(t1 - t2)
    expect = np.where(lag == 0, 1.0, 1.0 / np.maximum(lag, 1))
    err_cov = float(np.max(np.abs(cov - expect)))

    ok = err_series <= 1e-9 and err_trend <= 1e-12 and err_cov == 0
    _verdict(capsys, 2, ok, f"max series error {err_series:.2e}, trend error {err_trend:.2e}, "
                            f"covariance error {err_cov:.1e}")
    assert ok


# ---- 3. intervention ground truth --------------------------------------------------------

def test_criterion_3_intervention_truth(capsys):
    start = time.perf_counter()
    ratios, mags = [], []
    for seed in SEEDS_ATT:
        sc = simulate(SynthConfig(seed=seed))
        ratios.append(abs(sc.truth.true_att) / sc.spec.sigma)
        mags.append(abs(sc.truth.true_att))
    elapsed = time.perf_counter() - start
    mean_ratio = float(np.mean(ratios))
    in_band = int(sum(5 <= m <= 9 for m in mags))
    ok = 0.75 <= mean_ratio <= 1.05 and in_band >= 16 and elapsed < 30
    _verdict(capsys, 3, ok, f"mean |true_att|/sigma={mean_ratio:.4f} "
                            f"(per seed {min(ratios):.3f}..{max(ratios):.3f}), "
                            f"|true_att| in [5, 9] for {in_band}/20, {elapsed:.1f} s")
    assert ok


# ---- 4. effect recovery -------------------------------------------------------------------

def test_criterion_4_att_recovery(capsys, intervention_fits):
    fits, elapsed = intervention_fits
    rel_err, smapes, ascm_neg, carima_neg = [], [], 0, 0
    for seed in SEEDS_ATT:
        sc, pts = fits[seed]
        rep = build_report(sc.panel, {m: pts[m] for m in ("probcp", "ascm", "carima")}, sc.truth, S=SEASON)
        true_att = sc.truth.true_att
        rel_err.append(abs(rep.model("probcp").att - true_att) / abs(true_att))
        smapes.append(rep.model("probcp").treated_smape)
        ascm_neg += rep.model("ascm").att < 0
        carima_neg += rep.model("carima").att < 0
    ok = (max(rel_err) <= 0.20 and max(smapes) <= 0.06 and ascm_neg == 20
          and carima_neg == 20 and elapsed < 600)
    _verdict(capsys, 4, ok, f"probcp worst ATT error {max(rel_err):.1%}, worst treated sMAPE "
                            f"{max(smapes):.4f}; negative ATT: ascm {ascm_neg}/20, carima "
                            f"{carima_neg}/20; fits took {elapsed:.0f} s")
    assert ok


# ---- 5. longer series help the mixer ------------------------------------------------------

def test_criterion_5_length_ordering(capsys):
    wins, pairs = 0, []
    for seed in SEEDS_ORDER:
        scores = []
        for length in (90, 420):
            sc = simulate(SynthConfig(length=length, seed=seed))
            scores.append(_treated_smape(sc, fit_model(sc.panel, "mixer", season=SEASON).points()))
        pairs.append(scores)
        wins += scores[1] < scores[0]
    ok = wins >= 8
    mean90, mean420 = np.mean(pairs, axis=0)
    _verdict(capsys, 5, ok, f"length 420 beats length 90 on {wins}/10 seeds "
                            f"(mean sMAPE {mean420:.4f} vs {mean90:.4f})")
    assert ok


# ---- 6. placebo protocol -------------------------------------------------------------------

def test_criterion_6_placebo(capsys, intervention_fits, null_fits):
    fits, _ = intervention_fits
    passed = {m: 0 for m in MODELS}
    accepted = {m: 0 for m in MODELS}
    for seed in SEEDS_PLACEBO:
        sc, pts = fits[seed]
        rep = build_report(sc.panel, {m: pts[m] for m in MODELS}, S=SEASON)
        for m in MODELS:
            passed[m] += rep.model(m).placebo.p_value < 0.05
        sc0, pts0 = null_fits[seed]
        rep0 = build_report(sc0.panel, pts0, S=SEASON)
        for m in MODELS:
            accepted[m] += rep0.model(m).placebo.p_value >= 0.05
    ok = all(passed[m] >= 9 and accepted[m] >= 9 for m in MODELS)
    detail = ", ".join(f"{m} {passed[m]}/10 effect, {accepted[m]}/10 null" for m in MODELS)
    _verdict(capsys, 6, ok, detail)
    assert ok


# ---- 7. solver oracles ---------------------------------------------------------------------

def _compositions(n, J):
    if J == 1:
        return np.array([[n]])
    return np.vstack([np.column_stack([np.full(len(r), k), r])
                      for k in range(n + 1) for r in [_compositions(n - k, J - 1)]])


def _fd_rel_error(loss, theta):
    _, g = loss(theta)
    num = np.empty_like(theta)
    eps = 1e-6
    for i in range(theta.size):
        e = np.zeros_like(theta)
        e[i] = eps
        num[i] = (loss(theta + e)[0] - loss(theta - e)[0]) / (2 * eps)
    return float(np.linalg.norm(num - g) / np.linalg.norm(g))


def test_criterion_7_solver_oracles(capsys):
    rng = np.random.default_rng(42)

    W = _compositions(100, 5) / 100.0
    sc_gap = -np.inf
    for _ in range(3):
        C = rng.normal(size=(12, 5))
        y = C @ rng.dirichlet(np.ones(5)) + 0.3 * rng.normal(size=12)
        w = fit_sc(y, C).gamma
        G, b = C.T @ C, C.T @ y
        grid = float((np.einsum("ij,jk,ik->i", W, G, W) - 2 * W @ b + y @ y).min())
        sc_gap = max(sc_gap, float(np.sum((y - C @ w) ** 2)) - grid)

    X, y, lam = rng.normal(size=(30, 6)), rng.normal(size=30), 0.7
    Q, R = np.linalg.qr(np.vstack([X, math.sqrt(lam) * np.eye(6)]))
    oracle = np.linalg.solve(R, Q.T @ np.concatenate([y, np.zeros(6)]))
    ridge_err = float(np.max(np.abs(ridge_solve(X, y, lam) - oracle)))

    ar1 = ArimaModel((1, 0, 0), np.array([0.5]), np.empty(0), 0.0, 1.0, 0.0)
    ar_fc = forecast_arima(ar1, [0.0, 4.0], 3)
    ar_ok = bool(np.array_equal(ar_fc, [2.0, 1.0, 0.5]))

    shapes = mixer_shapes(6, 3, 2, 2, 2)
    theta = mixer_pack({k: 0.3 * rng.normal(size=s) for k, s in shapes.items()}, shapes)
    Xm, ym = rng.normal(size=(5, 6, 2)), rng.normal(size=(5, 3))
    mixer_err = _fd_rel_error(lambda t: mixer_loss(t, shapes, Xm, ym), theta)

    cfg = ProbCpConfig(horizon=3, season=2, window_w=4, hidden_size=3, taus=(0.1, 0.5, 0.9))
    pshapes = probcp_shapes(cfg, 4, 1)
    ptheta = probcp_pack({k: 0.3 * rng.normal(size=s) for k, s in pshapes.items()}, pshapes)
    args = (rng.normal(size=(6, 4)), rng.normal(size=(6, 3)), rng.normal(size=(6, 4, 1)),
            rng.normal(size=(6, 3)), cfg.taus)
    probcp_err = _fd_rel_error(lambda t: probcp_loss(t, pshapes, *args), ptheta)

    ok = sc_gap <= 1e-6 and ridge_err <= 1e-10 and ar_ok and mixer_err <= 1e-4 and probcp_err <= 1e-4
    _verdict(capsys, 7, ok, f"SC minus grid optimum {sc_gap:.2e}, ridge vs QR {ridge_err:.1e}, "
                            f"AR(1) forecast {ar_fc.tolist()}, gradient errors mixer "
                            f"{mixer_err:.1e} probcp {probcp_err:.1e}")
    assert ok


# ---- 8. bundled price fixture ----------------------------------------------------------------

def test_criterion_8_price_fixture(capsys, tmp_path):
    paths = fixture_paths()
    rc = main(["study", "--config", str(paths.study), "--out", str(tmp_path)])
    doc = json.loads((tmp_path / "report.json").read_text())
    atts = {m["model"]: m["att"] for m in doc["models"]}
    rel = relative_att(REFERENCE_ATT, TREATED_PRE_MEAN)
    ok = (rc in (0,) and sorted(atts) == sorted(MODELS) and all(a < 0 for a in atts.values())
          and round(rel * 100, 1) == -7.0)
    att_text = ", ".join(f"{m} {a:.3f}" for m, a in atts.items())
    _verdict(capsys, 8, ok, f"fixture ATTs {att_text}; {REFERENCE_ATT} / {TREATED_PRE_MEAN} "
                            f"= {rel:.4%}")
    assert ok


# ---- 9. determinism ----------------------------------------------------------------------------

LIGHT = {
    "probcp": {"epochs": 3},
    "mixer": {"epochs": 3},
    "ascm": {"lambda_grid": [0.1, 10.0]},
    "carima": {"order_grid": [[0, 1, 0], [1, 0, 0]]},
}


def _grid_reports(seed: int) -> list[str]:
    out = []
    for sc in generate_scenario_grid([seed]):
        pts = {m: fit_model(sc.panel, m, cfg, season=SEASON).points() for m, cfg in LIGHT.items()}
        out.append(report_to_json(build_report(sc.panel, pts, sc.truth, S=SEASON)))
    return out


def test_criterion_9_determinism(capsys):
    first = _grid_reports(0)
    second = _grid_reports(0)
    same = sum(a.encode() == b.encode() for a, b in zip(first, second))
    ok = len(first) == 8 and same == 8
    _verdict(capsys, 9, ok, f"{same}/8 grid reports byte-identical across two runs")
    assert ok
