from __future__ import annotations

import numpy as np
import pytest

from cfpanel.errors import DegenerateSigma, TooShort
from cfpanel.numerics import clip_eigenvalues
from cfpanel.synthgen import (
    InterventionSpec,
    SynthConfig,
    generate_scenario_grid,
    generate_series,
    generate_values,
    gp_covariance,
    inject_intervention,
    sample_gp_beta0,
    simulate,
    three_sine,
)


def test_covariance_entries():
    cov = gp_covariance(6)
    assert np.all(np.diag(cov) == 1)
    assert cov[0, 1] == 1.0
    assert cov[0, 2] == 0.5
    assert cov[0, 3] == pytest.approx(1 / 3, abs=0)
    assert cov[5, 1] == 0.25


def test_gp_length_one_is_standard_normal():
    a = sample_gp_beta0(1, seed=5)
    z = np.random.default_rng(5).standard_normal(1)
    np.testing.assert_allclose(a, z)
    with pytest.raises(TooShort):
        sample_gp_beta0(0)


def test_gp_deterministic_per_seed():
    assert np.array_equal(sample_gp_beta0(50, 3), sample_gp_beta0(50, 3))
    assert not np.array_equal(sample_gp_beta0(50, 3), sample_gp_beta0(50, 4))


def test_gp_first_entry_variance_monte_carlo():
    n = 30
    draws = np.array([sample_gp_beta0(n, s)[0] for s in range(10_000)])
    target = clip_eigenvalues(gp_covariance(n))[0, 0]
    assert 0.9 * target <= draws.var() <= 1.1 * target


def test_three_sine_hand_value():
    # with beta0 = 0 and every beta = 5 the daily and weekly terms vanish at t = 7
    v = three_sine(7, 0.0, 5.0, 5.0, 5.0)
    assert v == pytest.approx(100 + 5 * np.sin(14 * np.pi / 30), abs=1e-12)
    assert v == pytest.approx(104.973, abs=5e-4)


def test_daily_term_is_zero_on_integers():
    t = np.arange(1, 500)
    assert np.max(np.abs(np.sin(2 * np.pi * t / 1.0))) < 1e-9 * 500


def test_trend_factor():
    cfg = SynthConfig(length=420, trend=True, seed=2)
    flat = generate_series(SynthConfig(length=420, trend=False, seed=2), 0)
    trended = generate_series(cfg, 0)
    t = np.arange(1, 421)
    np.testing.assert_allclose(trended, flat * 1.00005 ** t, rtol=1e-14)
    assert 1.00005 ** 420 == pytest.approx(1.0212, abs=1e-4)


def test_series_depends_only_on_seed_and_unit():
    cfg = SynthConfig(n_units=5, seed=9)
    vals = generate_values(cfg)
    np.testing.assert_array_equal(vals[3], generate_series(cfg, 3))
    bigger = generate_values(SynthConfig(n_units=8, seed=9))
    np.testing.assert_array_equal(bigger[:5], vals)


def test_split_and_t0():
    sc = simulate(SynthConfig(seed=1))
    assert len(sc.panel.treated_ids) == 15 and len(sc.panel.control_ids) == 35
    assert sc.panel.t0 == 66
    sc.truth.check(sc.panel)


def test_intervention_invariants():
    cfg = SynthConfig(seed=4)
    raw = generate_values(cfg)
    panel, truth, spec = inject_intervention(raw, seed=4)
    mask = panel.treated_mask
    np.testing.assert_array_equal(panel.values[~mask], raw[~mask])
    np.testing.assert_array_equal(panel.values[:, :66], raw[:, :66])
    for uid, cf in truth.counterfactuals.items():
        assert np.all(panel.unit(uid).values[66:] < cf)
    assert set(truth.counterfactuals) == set(panel.treated_ids)
    assert spec.sigma == pytest.approx(np.std(raw[mask, :66], ddof=1))


def test_median_value_shifted_by_point_nine_sigma():
    rng = np.random.default_rng(0)
    pre = rng.normal(100, 3, size=(10, 76))
    values = pre.copy()
    panel, truth, spec = inject_intervention(values, InterventionSpec(), seed=0)
    mask = panel.treated_mask
    pooled = values[mask, :panel.t0].ravel()
    med = np.median(pooled)
    # put a value exactly at the pooled median into the post-period of a treated unit
    values2 = values.copy()
    i = int(np.flatnonzero(mask)[0])
    values2[i, panel.t0] = med
    panel2, _, spec2 = inject_intervention(values2, InterventionSpec(), seed=0)
    assert values2[i, panel.t0] - panel2.values[i, panel.t0] == pytest.approx(0.9 * spec2.sigma)


def test_null_spec_changes_nothing():
    raw = generate_values(SynthConfig(seed=2))
    panel, truth, _ = inject_intervention(raw, InterventionSpec.null(), seed=2)
    np.testing.assert_array_equal(panel.values, raw)
    assert truth.true_att == 0


def test_degenerate_sigma():
    with pytest.raises(DegenerateSigma):
        inject_intervention(np.ones((10, 40)), seed=0)


def test_spec_validation():
    with pytest.raises(ValueError):
        InterventionSpec(treat_fraction=1.0)
    with pytest.raises(ValueError):
        InterventionSpec(decile_constants=(0.5, 0.4, 0.9, 1.2, 1.5))
    with pytest.raises(ValueError):
        SynthConfig(length=24)


def test_grid_labels_and_size():
    grid = generate_scenario_grid([3])
    assert len(grid) == 8
    labels = {s.label for s in grid}
    assert "stationary_n50_T90_seed3" in labels and "trend_n300_T420_seed3" in labels
    assert len(labels) == 8
    with pytest.raises(ValueError):
        generate_scenario_grid([])
