from __future__ import annotations

from functools import lru_cache

import numpy as np
import pytest

from cfpanel.errors import LengthMismatch, TooFewDonors
from cfpanel.local import AugmentedModel, fit_ascm, fit_sc


def _sc_objective(y, C, w):
    r = y - C @ w
    return float(r @ r)


@lru_cache(maxsize=None)
def _compositions(n, J):
    """All non-negative integer vectors of length ``J`` summing to ``n``."""
    if J == 1:
        return np.array([[n]], dtype=np.int16)
    blocks = []
    for first in range(n + 1):
        rest = _compositions(n - first, J - 1)
        blocks.append(np.column_stack([np.full(len(rest), first, dtype=np.int16), rest]))
    return np.vstack(blocks)


def _grid_best(y, C, step=0.01):
    n = round(1 / step)
    W = _compositions(n, C.shape[1]) / n
    G, b = C.T @ C, C.T @ y
    f = np.einsum("ij,jk,ik->i", W, G, W) - 2 * W @ b + y @ y
    return float(f.min())


def test_exact_donor_match():
    rng = np.random.default_rng(0)
    C = rng.normal(size=(20, 4))
    sc = fit_sc(C[:, 2], C)
    np.testing.assert_allclose(sc.gamma, [0, 0, 1, 0], atol=1e-6)
    assert np.max(np.abs(sc.residuals)) < 1e-5


def test_average_of_two_donors():
    rng = np.random.default_rng(1)
    C = rng.normal(size=(30, 3))
    sc = fit_sc(0.5 * C[:, 0] + 0.5 * C[:, 1], C)
    np.testing.assert_allclose(sc.gamma, [0.5, 0.5, 0], atol=1e-6)


@pytest.mark.parametrize("seed", range(3))
def test_five_donor_grid_oracle(seed):
    rng = np.random.default_rng(seed)
    C = rng.normal(size=(12, 5))
    y = C @ rng.dirichlet(np.ones(5)) + 0.3 * rng.normal(size=12)
    sc = fit_sc(y, C)
    f = _sc_objective(y, C, sc.gamma)
    # the continuous optimum can only beat the 0.01 grid
    assert f <= _grid_best(y, C) + 1e-6
    assert np.all(sc.gamma >= 0) and sc.gamma.sum() == pytest.approx(1, abs=1e-12)


def test_sc_kkt():
    rng = np.random.default_rng(7)
    C = rng.normal(size=(25, 8))
    y = rng.normal(size=25)
    w = fit_sc(y, C).gamma
    g = -2 * C.T @ (y - C @ w)
    active = w > 1e-8
    # equal gradients on the support, no smaller gradient off it
    assert np.ptp(g[active]) < 1e-5
    assert np.all(g[~active] >= g[active].min() - 1e-5)


def test_prediction_inside_convex_hull():
    rng = np.random.default_rng(3)
    C = rng.normal(size=(15, 6))
    post = rng.normal(size=(5, 6))
    pred = fit_sc(rng.normal(size=15), C).predict(post)
    assert np.all(pred >= post.min(axis=1) - 1e-12)
    assert np.all(pred <= post.max(axis=1) + 1e-12)


def test_intercept_absorbs_level():
    rng = np.random.default_rng(4)
    C = rng.normal(size=(20, 4))
    sc = fit_sc(C[:, 1] + 5.0, C, intercept=True)
    assert sc.intercept == pytest.approx(5.0, abs=1e-6)
    np.testing.assert_allclose(sc.gamma, [0, 1, 0, 0], atol=1e-6)


def test_too_few_donors_and_shapes():
    with pytest.raises(TooFewDonors):
        fit_sc(np.zeros(5), np.zeros((5, 1)))
    with pytest.raises(LengthMismatch):
        fit_sc(np.zeros(5), np.zeros((4, 3)))


def _donor_data(seed=5, t0=30, h=8, J=10):
    rng = np.random.default_rng(seed)
    f = np.cumsum(rng.normal(size=t0 + h))
    load = rng.uniform(0.5, 1.5, J)
    Y = f[:, None] * load + rng.normal(scale=0.2, size=(t0 + h, J))
    return Y[:t0], Y[t0:], f, rng


def test_ascm_equals_sc_when_balanced():
    pre, post, _, _ = _donor_data()
    y = pre[:, :3].mean(axis=1)
    sc = fit_sc(y, pre)
    model = fit_ascm(y, pre, post, sc=sc)
    if np.max(np.abs(sc.residuals)) < 1e-8:
        np.testing.assert_allclose(model.predict(post), sc.predict(post), atol=1e-6)
    # zero imbalance means a zero correction
    forced = fit_ascm(pre @ sc.gamma, pre, post, sc=sc)
    np.testing.assert_allclose(forced.ridge_coeffs, 0, atol=1e-10)
    np.testing.assert_allclose(forced.predict(post), sc.predict(post), atol=1e-10)


def test_huge_lambda_recovers_sc():
    pre, post, _, rng = _donor_data()
    y = pre @ rng.dirichlet(np.ones(10)) + 3.0
    sc = fit_sc(y, pre)
    model = fit_ascm(y, pre, post, sc=sc, lam=1e12)
    np.testing.assert_allclose(model.predict(post), sc.predict(post), atol=1e-6)


def test_ridge_weights_sum_to_zero():
    pre, post, _, rng = _donor_data()
    y = pre @ rng.dirichlet(np.ones(10)) + 2.0
    model = fit_ascm(y, pre, post)
    assert model.ridge_coeffs.sum() == pytest.approx(0, abs=1e-9)
    assert model.weights.sum() == pytest.approx(1, abs=1e-9)
    assert model.lam in [float(v) for v in np.logspace(-3, 3, 13)]


def test_augmentation_helps_outside_hull():
    # treated unit loads more heavily on the common factor than any donor
    pre, post, f, rng = _donor_data(seed=6)
    t0 = pre.shape[0]
    y_all = 2.0 * f
    sc = fit_sc(y_all[:t0], pre)
    model = fit_ascm(y_all[:t0], pre, post, sc=sc)
    err_sc = np.mean((sc.predict(post) - y_all[t0:]) ** 2)
    err_ascm = np.mean((model.predict(post) - y_all[t0:]) ** 2)
    assert err_ascm < err_sc


def test_ascm_json_round_trip():
    pre, post, _, rng = _donor_data()
    y = pre @ rng.dirichlet(np.ones(10))
    model = fit_ascm(y, pre, post, donor_ids=[f"c{j}" for j in range(10)])
    back = AugmentedModel.from_dict(model.to_dict())
    np.testing.assert_array_equal(back.predict(post), model.predict(post))
    assert back.base.donor_ids == model.base.donor_ids


def test_ascm_shape_error():
    pre, post, _, _ = _donor_data()
    with pytest.raises(LengthMismatch):
        fit_ascm(pre[:, 0], pre, post[:, :4])
