from __future__ import annotations

import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from cfpanel.errors import (
    BadTau,
    FactorizationFailed,
    LengthMismatch,
    NonFiniteObjective,
    NotSquare,
    NotSymmetric,
    Singular,
    UnsortedTaus,
)
from cfpanel.numerics import (
    OptimizerConfig,
    cholesky_psd,
    clip_eigenvalues,
    crps_from_quantiles,
    minimize,
    pinball_grad,
    pinball_loss,
    project_simplex,
    ridge_solve,
)
from cfpanel.synthgen import gp_covariance


# ---- cholesky -------------------------------------------------------------------

def test_cholesky_identity():
    r = cholesky_psd(np.eye(3))
    np.testing.assert_array_equal(r.L, np.eye(3))
    assert r.jitter == 0


def test_cholesky_rank_one():
    r = cholesky_psd(np.ones((2, 2)))
    np.testing.assert_allclose(r.L, [[1, 0], [1, 0]], atol=1e-12)
    assert r.jitter == 0


def test_cholesky_gp_covariance_small():
    cov = gp_covariance(4)
    assert cov[0, 2] == 0.5 and cov[0, 3] == pytest.approx(1 / 3)
    r = cholesky_psd(cov)
    # eigen-decomposition oracle for the clipped matrix
    w, V = np.linalg.eigh(cov)
    clipped = (V * np.maximum(w, 0)) @ V.T
    assert np.isfinite(r.jitter)
    np.testing.assert_allclose(r.L @ r.L.T, clipped + r.jitter * np.eye(4), atol=1e-8)


def test_cholesky_indefinite_long_gp():
    cov = gp_covariance(200)
    assert np.linalg.eigvalsh(cov)[0] < 0  # the raw kernel is not PSD
    r = cholesky_psd(cov)
    np.testing.assert_allclose(r.L @ r.L.T, r.repaired, atol=1e-8)
    assert np.allclose(np.triu(r.L, 1), 0)


def test_cholesky_validation():
    with pytest.raises(NotSquare):
        cholesky_psd(np.ones((2, 3)))
    with pytest.raises(NotSymmetric):
        cholesky_psd(np.array([[1.0, 0.5], [0.0, 1.0]]))
    with pytest.raises(FactorizationFailed):
        cholesky_psd(np.array([[np.nan, 0.0], [0.0, 1.0]]))


@settings(max_examples=30)
@given(hnp.arrays(float, (5, 5), elements=st.floats(-3, 3)))
def test_clip_is_psd(a):
    m = clip_eigenvalues(a + a.T)
    assert np.linalg.eigvalsh(m)[0] > -1e-9


# ---- simplex --------------------------------------------------------------------

@pytest.mark.parametrize("v,expect", [([0.6, 0.6], [0.5, 0.5]), ([2.0, 0.0], [1.0, 0.0])])
def test_project_simplex_examples(v, expect):
    np.testing.assert_allclose(project_simplex(v), expect)


def test_project_simplex_grid_oracle():
    v = np.array([0.3, 0.3, 0.3])
    grid = [(a / 100, b / 100, 1 - a / 100 - b / 100)
            for a in range(101) for b in range(101 - a)]
    best = min(grid, key=lambda w: np.sum((np.array(w) - v) ** 2))
    out = project_simplex(v)
    np.testing.assert_allclose(out, [1 / 3] * 3, atol=1e-12)
    assert np.sum((out - v) ** 2) <= np.sum((np.array(best) - v) ** 2) + 1e-15


@settings(max_examples=60)
@given(hnp.arrays(float, st.integers(1, 12), elements=st.floats(-50, 50)))
def test_project_simplex_kkt(v):
    w = project_simplex(v)
    assert abs(w.sum() - 1) < 1e-12 and np.all(w >= 0)
    d0 = np.sum((w - v) ** 2)
    eps = 1e-6
    for i, j in itertools.permutations(range(v.size), 2):
        if w[i] >= eps:
            moved = w.copy()
            moved[i] -= eps
            moved[j] += eps
            assert np.sum((moved - v) ** 2) >= d0 - 1e-12


# ---- ridge ----------------------------------------------------------------------

def test_ridge_closed_form():
    np.testing.assert_allclose(ridge_solve(np.eye(2), [2.0, 4.0], 1.0), [1.0, 2.0])


def test_ridge_matches_qr_oracle():
    rng = np.random.default_rng(1)
    X = rng.normal(size=(30, 5))
    y = rng.normal(size=30)
    Q, R = np.linalg.qr(X)
    oracle = np.linalg.solve(R, Q.T @ y)
    np.testing.assert_allclose(ridge_solve(X, y, 0.0), oracle, atol=1e-10)


def test_ridge_shrinkage_and_wide():
    rng = np.random.default_rng(2)
    X = rng.normal(size=(4, 10))
    y = rng.normal(size=4)
    assert np.linalg.norm(ridge_solve(X, y, 1e12)) < 1e-9 * np.linalg.norm(y)
    b = ridge_solve(X, y, 0.5)  # p > n is fine for lambda > 0
    g = X.T @ (X @ b - y) + 0.5 * b
    assert np.linalg.norm(g) < 1e-8 * max(1.0, np.linalg.norm(X.T @ y))


def test_ridge_singular():
    X = np.array([[1.0, 1.0], [2.0, 2.0], [3.0, 3.0]])
    with pytest.raises(Singular):
        ridge_solve(X, [1.0, 2.0, 3.0], 0.0)


# ---- minimize -------------------------------------------------------------------

def test_minimize_quadratic():
    x = minimize(lambda x: ((x[0] - 3) ** 2, np.array([2 * (x[0] - 3)])), [0.0],
                 OptimizerConfig(step_size=0.1, max_iters=5000))
    assert abs(x[0] - 3) < 1e-4


def _rosen(x):
    a, b = x
    f = (1 - a) ** 2 + 100 * (b - a * a) ** 2
    g = np.array([-2 * (1 - a) - 400 * a * (b - a * a), 200 * (b - a * a)])
    return f, g


def test_minimize_rosenbrock():
    x = minimize(_rosen, [-1.2, 1.0], OptimizerConfig(step_size=0.02, max_iters=10_000))
    assert _rosen(x)[0] < 1e-2


def test_minimize_lbfgs_rosenbrock():
    x = minimize(_rosen, [-1.2, 1.0], OptimizerConfig(method="lbfgs", max_iters=500))
    assert _rosen(x)[0] < 1e-8


def test_minimize_nan():
    with pytest.raises(NonFiniteObjective):
        minimize(lambda x: (float("nan"), np.zeros(1)), [0.0])


def test_minimize_never_worse_and_trace_monotone():
    trace = []
    x0 = np.array([-1.2, 1.0])
    x = minimize(_rosen, x0, OptimizerConfig(step_size=0.05, max_iters=300), trace=trace)
    assert _rosen(x)[0] <= _rosen(x0)[0]
    assert np.all(np.diff(trace) <= 0)


def test_minimize_minibatch_deterministic():
    rng = np.random.default_rng(0)
    A = rng.normal(size=(200, 3))
    b = A @ np.array([1.0, -2.0, 0.5])

    def obj(x, idx):
        r = A[idx] @ x - b[idx]
        return float(np.mean(r * r)), 2 * A[idx].T @ r / len(idx)

    cfg = OptimizerConfig(step_size=0.05, max_iters=200, batch_size=32, seed=4)
    x1 = minimize(obj, np.zeros(3), cfg, n_samples=200)
    x2 = minimize(obj, np.zeros(3), cfg, n_samples=200)
    assert np.array_equal(x1, x2)
    np.testing.assert_allclose(x1, [1.0, -2.0, 0.5], atol=1e-2)


def test_optimizer_config_validation():
    for kw in ({"step_size": 0}, {"max_iters": 0}, {"tolerance": 0}, {"method": "sgd"}):
        with pytest.raises(ValueError):
            OptimizerConfig(**kw)


# ---- losses ---------------------------------------------------------------------

def test_pinball_examples():
    assert pinball_loss(2.0, 2.0, 0.3) == 0
    assert pinball_loss(1.0, 0.0, 0.9) == pytest.approx(0.9)
    assert pinball_loss(0.0, 1.0, 0.9) == pytest.approx(0.1)
    with pytest.raises(BadTau):
        pinball_loss(1.0, 0.0, 1.0)


@settings(max_examples=50)
@given(st.floats(-100, 100), st.floats(-100, 100), st.floats(0.01, 0.99))
def test_pinball_nonnegative(y, q, tau):
    loss = pinball_loss(y, q, tau)
    assert loss >= 0
    assert (loss == 0) == (y == q)


def test_pinball_grad_finite_differences():
    rng = np.random.default_rng(3)
    y, q = rng.normal(size=20), rng.normal(size=20)
    taus = rng.uniform(0.05, 0.95, 20)
    h = 1e-5
    fd = (pinball_loss(y, q + h, taus) - pinball_loss(y, q - h, taus)) / (2 * h)
    np.testing.assert_allclose(pinball_grad(y, q, taus), fd, rtol=1e-4)


def test_crps_examples():
    taus = [0.1, 0.5, 0.9]
    assert crps_from_quantiles(3.0, [3.0, 3.0, 3.0], taus) == 0
    assert crps_from_quantiles(1.0, [0.0], [0.5]) == pytest.approx(1.0)
    with pytest.raises(LengthMismatch):
        crps_from_quantiles(1.0, [0.0, 1.0], [0.5])
    with pytest.raises(UnsortedTaus):
        crps_from_quantiles(1.0, [0.0, 1.0], [0.6, 0.5])


def test_crps_linear_in_shift():
    taus = [0.25, 0.5, 0.75]
    vals = [crps_from_quantiles(s, [0.0, 0.0, 0.0], taus) for s in (1.0, 2.0, 4.0)]
    assert vals[1] == pytest.approx(2 * vals[0]) and vals[2] == pytest.approx(4 * vals[0])
