"""Non-seasonal ARIMA(p, d, q) fitted by conditional sum of squares.

The differenced series ``w`` is modelled around its mean ``mu``:

    (w_t - mu) - sum_i ar_i (w_{t-i} - mu) = e_t + sum_j ma_j e_{t-j}

Residuals are conditioned on the first ``p`` observations and on zero
pre-sample innovations, which turns both the residual recursion and its
derivatives into linear filters. Orders are selected by AICc.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.signal import lfilter

from .errors import NoValidModel, TooShort
from .numerics import OptimizerConfig, minimize

__all__ = [
    "ArimaModel",
    "DEFAULT_ORDER_GRID",
    "difference",
    "integrate",
    "css_objective",
    "fit_arima",
    "fit_carima",
    "forecast_arima",
    "is_stationary",
    "is_invertible",
]

DEFAULT_ORDER_GRID = tuple(itertools.product(range(4), range(2), range(4)))
MIN_PRE_LENGTH = 20

_LBFGS = OptimizerConfig(method="lbfgs", max_iters=300, tolerance=1e-10)


@dataclass(frozen=True)
class ArimaModel:
    order: tuple[int, int, int]
    ar: np.ndarray
    ma: np.ndarray
    intercept: float
    sigma2: float
    aicc: float
    css: float = math.nan
    n_obs: int = 0
    xreg: np.ndarray = field(default_factory=lambda: np.empty(0))

    @property
    def params(self) -> np.ndarray:
        return np.concatenate([[self.intercept], self.ar, self.ma])

    def to_dict(self) -> dict:
        return {
            "order": list(self.order),
            "ar": self.ar.tolist(),
            "ma": self.ma.tolist(),
            "intercept": self.intercept,
            "sigma2": self.sigma2,
            "aicc": self.aicc,
            "css": self.css,
            "n_obs": self.n_obs,
            "xreg": self.xreg.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ArimaModel":
        return cls(tuple(d["order"]), np.asarray(d["ar"], dtype=float),
                   np.asarray(d["ma"], dtype=float), float(d["intercept"]),
                   float(d["sigma2"]), float(d["aicc"]), float(d.get("css", math.nan)),
                   int(d.get("n_obs", 0)), np.asarray(d.get("xreg", []), dtype=float))


def difference(y, d: int) -> np.ndarray:
    y = np.asarray(y, dtype=float)
    for _ in range(d):
        y = np.diff(y)
    return y


def integrate(w, d: int, initial) -> np.ndarray:
    """Inverse of :func:`difference` given the first ``d`` original values.

    ``initial`` holds ``y[0], ..., y[d-1]``; the result has length
    ``len(w) + d``.
    """
    w = np.asarray(w, dtype=float)
    initial = np.asarray(initial, dtype=float)
    if initial.size != d:
        raise ValueError(f"need {d} initial values, got {initial.size}")
    if d == 0:
        return w.copy()
    # differenced heads: level k's first value for k = 0 .. d-1
    heads = [difference(initial, k)[0] for k in range(d)]
    out = w
    for k in reversed(range(d)):
        out = np.concatenate([[heads[k]], heads[k] + np.cumsum(out)])
    return out


def _roots_inside(poly) -> bool:
    # True when all roots of z^n + c1 z^(n-1) + ... lie strictly inside the unit circle
    if len(poly) <= 1:
        return True
    return bool(np.all(np.abs(np.roots(poly)) < 1.0 - 1e-8))


def is_stationary(ar) -> bool:
    return _roots_inside(np.concatenate([[1.0], -np.asarray(ar, dtype=float)]))


def is_invertible(ma) -> bool:
    return _roots_inside(np.concatenate([[1.0], np.asarray(ma, dtype=float)]))


def _residuals(params, w, p, q):
    mu = params[0]
    ar = params[1:1 + p]
    ma = params[1 + p:1 + p + q]
    u = w - mu
    n = w.size
    z = u[p:].copy()
    for i in range(1, p + 1):
        z -= ar[i - 1] * u[p - i:n - i]
    theta = np.concatenate([[1.0], ma])
    e = lfilter([1.0], theta, z)
    return e, u, theta, ar


def css_objective(params, w, p: int, q: int, skip: int = 0):
    """Mean squared CSS residual and its exact gradient.

    The first ``skip`` residuals still drive the MA recursion but are left
    out of the sum, so orders with different ``p`` can be scored on the
    same observations.
    """
    params = np.asarray(params, dtype=float)
    e, u, theta, ar = _residuals(params, w, p, q)
    n = w.size
    m = e.size
    # d e / d params: each row is filtered by 1 / theta(B) in one call
    rows = np.empty((1 + p + q, m))
    rows[0] = -(1.0 - ar.sum())
    for i in range(1, p + 1):
        rows[i] = -u[p - i:n - i]
    for j in range(1, q + 1):
        rows[p + j, :j] = 0.0
        rows[p + j, j:] = -e[:m - j]
    es = e[skip:]
    with np.errstate(over="ignore", invalid="ignore"):
        de = lfilter([1.0], theta, rows, axis=1)
        grad = 2.0 * (de[:, skip:] @ es)
        f = float(es @ es)
    return f / es.size, grad / es.size


def _pacf_to_ar(x):
    """Stationary AR coefficients from unconstrained values, with the Jacobian.

    Durbin-Levinson recursion on partial autocorrelations ``tanh(x)``.
    """
    r = np.tanh(np.asarray(x, dtype=float))
    n = r.size
    phi = np.empty(0)
    J = np.zeros((0, n))  # d phi / d r
    for k in range(n):
        rk = r[k]
        new_J = np.zeros((k + 1, n))
        new_J[:k] = J - rk * J[::-1]
        new_J[:k, k] = -phi[::-1]
        new_J[k, k] = 1.0
        phi = np.concatenate([phi - rk * phi[::-1], [rk]])
        J = new_J
    return phi, J * (1.0 - r * r)


def _ar_to_pacf(phi) -> np.ndarray:
    phi = np.asarray(phi, dtype=float).copy()
    r = np.empty(phi.size)
    for k in range(phi.size, 0, -1):
        rk = float(np.clip(phi[k - 1], -0.99, 0.99))
        r[k - 1] = rk
        prev = phi[:k - 1]
        phi = (prev + rk * prev[::-1]) / (1.0 - rk * rk)
    return np.arctanh(r)


def _constrained(z, p, q):
    """Map ``[mu, ar_pacf, ma_pacf]`` to ``[mu, ar, ma]`` and return the Jacobian."""
    ar, Ja = _pacf_to_ar(z[1:1 + p])
    ma, Jm = _pacf_to_ar(z[1 + p:])
    J = np.zeros((z.size, z.size))
    J[0, 0] = 1.0
    J[1:1 + p, 1:1 + p] = Ja
    J[1 + p:, 1 + p:] = -Jm
    return np.concatenate([[z[0]], ar, -ma]), J


def _ar_ols(w, p, skip):
    # pure AR with a mean is linear in (c, ar): w_t = c + sum ar_i w_{t-i} + e_t
    n = w.size
    X = np.column_stack([np.ones(n - p)] + [w[p - i:n - i] for i in range(1, p + 1)])
    coef = np.linalg.lstsq(X[skip:], w[p + skip:], rcond=None)[0]
    ar = coef[1:]
    denom = 1.0 - ar.sum()
    mu = coef[0] / denom if abs(denom) > 1e-12 else float(w.mean())
    return np.concatenate([[mu], ar])


def fit_arima(series, order, optimizer: OptimizerConfig = _LBFGS,
              n_cond: int | None = None) -> ArimaModel:
    """CSS fit of one (p, d, q) order; the AICc is filled in, validity is not checked.

    ``n_cond`` is the number of leading differenced observations excluded
    from the sum of squares (default ``p``); it must be at least ``p``.
    """
    p, d, q = (int(v) for v in order)
    w = difference(series, d)
    n_cond = p if n_cond is None else int(n_cond)
    if n_cond < p:
        raise ValueError(f"n_cond {n_cond} must be >= p = {p}")
    skip = n_cond - p
    n_eff = w.size - n_cond
    k = p + q + 2  # ar, ma, mean, innovation variance
    if n_eff - k - 1 <= 0:
        raise TooShort(f"order {order} needs more than {w.size} differenced observations")
    ols = _ar_ols(w, p, skip)
    stationary = is_stationary(ols[1:])
    if q == 0 and stationary:
        x = ols  # the CSS minimizer in closed form
    else:
        # optimize over partial autocorrelations so every iterate is
        # stationary and invertible
        start_ar = _ar_to_pacf(ols[1:]) if stationary else np.zeros(p)
        z0 = np.concatenate([[ols[0] if stationary else w.mean()], start_ar, np.zeros(q)])

        def objective(z):
            params, J = _constrained(z, p, q)
            f, g = css_objective(params, w, p, q, skip)
            return f, J.T @ g

        x = _constrained(minimize(objective, z0, optimizer), p, q)[0]
    f, _ = css_objective(x, w, p, q, skip)
    scale = max(float(np.var(w)), 1e-300)
    sigma2 = max(f, 1e-12 * scale)
    loglik = -0.5 * n_eff * (math.log(2 * math.pi * sigma2) + 1.0)
    aicc = -2.0 * loglik + 2.0 * k + 2.0 * k * (k + 1) / (n_eff - k - 1)
    return ArimaModel((p, d, q), x[1:1 + p].copy(), x[1 + p:].copy(), float(x[0]),
                      sigma2, aicc, f * n_eff, int(w.size))


def fit_carima(series_pre, grid=DEFAULT_ORDER_GRID, covariates=None) -> ArimaModel:
    """Fit every order in ``grid`` and keep the stationary, invertible one with least AICc.

    With ``covariates`` (an ``(n, k)`` array) the series is first regressed on
    them plus a constant, and the ARIMA describes the regression residuals.
    """
    y = np.asarray(series_pre, dtype=float)
    if y.size < MIN_PRE_LENGTH:
        raise TooShort(f"pre-period of length {y.size} is shorter than {MIN_PRE_LENGTH}")
    xreg = np.empty(0)
    if covariates is not None:
        Xc = np.asarray(covariates, dtype=float).reshape(y.size, -1)
        xreg = np.linalg.lstsq(np.column_stack([np.ones(y.size), Xc]), y, rcond=None)[0]
        y = y - Xc @ xreg[1:]
    grid = [tuple(int(v) for v in o) for o in grid]
    max_p = max(o[0] for o in grid)
    max_d = max(o[1] for o in grid)
    best = None
    for order in grid:
        try:
            # every candidate is scored on the same final observations
            model = fit_arima(y, order, n_cond=max_p + max_d - order[1])
        except TooShort:
            continue
        if not (is_stationary(model.ar) and is_invertible(model.ma)):
            continue
        if not np.isfinite(model.aicc):
            continue
        if best is None or model.aicc < best.aicc:
            best = model
    if best is None:
        raise NoValidModel("no candidate order produced a stationary, invertible fit")
    if xreg.size:
        best = ArimaModel(best.order, best.ar, best.ma, best.intercept, best.sigma2,
                          best.aicc, best.css, best.n_obs, xreg[1:])
    return best


def forecast_arima(model: ArimaModel, series_pre, h: int, covariates_pre=None,
                   covariates_future=None) -> np.ndarray:
    """Recursive mean forecast (future innovations zero), integrated back ``d`` times."""
    y = np.asarray(series_pre, dtype=float)
    p, d, q = model.order
    reg_future = np.zeros(h)
    if model.xreg.size:
        Xp = np.asarray(covariates_pre, dtype=float).reshape(y.size, -1)
        if covariates_future is None:
            Xf = np.repeat(Xp[-1:], h, axis=0)  # frozen at the last observed values
        else:
            Xf = np.asarray(covariates_future, dtype=float).reshape(h, -1)
        y = y - Xp @ model.xreg
        reg_future = Xf @ model.xreg
    w = difference(y, d)
    e, u, _, _ = _residuals(model.params, w, p, q)
    e_full = np.concatenate([np.zeros(p), e])
    u_hist = list(u)
    e_hist = list(e_full)
    out = np.empty(h)
    for k in range(h):
        val = 0.0
        for i in range(1, p + 1):
            val += model.ar[i - 1] * u_hist[-i]
        for j in range(1, q + 1):
            val += model.ma[j - 1] * e_hist[-j]
        u_hist.append(val)
        e_hist.append(0.0)
        out[k] = val
    w_future = out + model.intercept
    if d:
        levels = [difference(y, k)[-1] for k in range(d)]
        for k in reversed(range(d)):
            w_future = levels[k] + np.cumsum(w_future)
    return w_future + reg_future
