"""Dense numerical kernels shared by the estimators.

Contents: a PSD-repairing Cholesky factorization, Euclidean projection onto
the probability simplex, a ridge solver, a seeded first-order minimizer and
the pinball / CRPS losses.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable

import numpy as np
import scipy.linalg
import scipy.optimize

from .errors import (
    BadTau,
    FactorizationFailed,
    LengthMismatch,
    NonFiniteObjective,
    NotSquare,
    NotSymmetric,
    Singular,
    UnsortedTaus,
)

__all__ = [
    "CholeskyResult",
    "OptimizerConfig",
    "cholesky_psd",
    "clip_eigenvalues",
    "project_simplex",
    "ridge_solve",
    "minimize",
    "pinball_loss",
    "pinball_grad",
    "crps_from_quantiles",
    "check_taus",
]

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class CholeskyResult:
    L: np.ndarray
    jitter: float
    repaired: np.ndarray  # the matrix actually factorized, L @ L.T


def clip_eigenvalues(cov: np.ndarray) -> np.ndarray:
    """Nearest PSD matrix in Frobenius norm: negative eigenvalues set to 0."""
    w, V = np.linalg.eigh(cov)
    out = (V * np.clip(w, 0.0, None)) @ V.T
    return 0.5 * (out + out.T)


def _semidefinite_cholesky(A: np.ndarray, tol: float) -> np.ndarray | None:
    # Outer-product Cholesky that accepts zero pivots (columns of a rank
    # deficient PSD matrix); returns None on a negative pivot.
    n = A.shape[0]
    R = A.copy()
    L = np.zeros_like(A)
    for j in range(n):
        d = R[j, j]
        if d < -tol:
            return None
        if d <= tol:
            if np.any(np.abs(R[j + 1:, j]) > np.sqrt(tol)):
                return None
            continue
        s = np.sqrt(d)
        col = R[j:, j] / s
        L[j:, j] = col
        R[j:, j:] -= np.outer(col, col)
    return L


def cholesky_psd(cov, jitter_start: float = 1e-10, max_escalations: int = 8) -> CholeskyResult:
    """Lower Cholesky factor of a symmetric matrix after PSD repair.

    Negative eigenvalues are clipped to zero, then the factorization is
    attempted with no jitter and, on failure, with ``jitter_start * 10**k``
    added to the diagonal for ``k = 0 .. max_escalations - 1``.
    """
    A = np.asarray(cov, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise NotSquare(f"covariance must be square, got shape {A.shape}")
    if not np.all(np.isfinite(A)):
        raise FactorizationFailed("covariance has non-finite entries")
    if np.max(np.abs(A - A.T), initial=0.0) > 1e-10:
        raise NotSymmetric("covariance is not symmetric to 1e-10")
    clipped = clip_eigenvalues(A)
    n = A.shape[0]
    scale = max(float(np.max(np.abs(np.diag(clipped)), initial=0.0)), 1.0)
    tol = 1e-12 * scale * n
    jitters = [0.0] + [jitter_start * 10.0**k for k in range(max_escalations)]
    for delta in jitters:
        M = clipped + delta * np.eye(n)
        L = _semidefinite_cholesky(M, tol)
        if L is not None:
            if delta:
                log.debug("cholesky_psd needed jitter %g", delta)
            return CholeskyResult(L, delta, M)
    raise FactorizationFailed(
        f"factorization failed after {max_escalations} jitter escalations "
        f"(largest jitter {jitters[-1]:g})"
    )


def project_simplex(v) -> np.ndarray:
    """Euclidean projection of ``v`` onto ``{w : w >= 0, sum(w) = 1}``.

    Sort-and-threshold: find the largest ``k`` such that the ``k``-th largest
    entry stays positive after subtracting the common shift.
    """
    v = np.asarray(v, dtype=float)
    if v.ndim != 1 or v.size == 0:
        raise ValueError("project_simplex needs a non-empty 1-D vector")
    u = np.sort(v)[::-1]
    css = np.cumsum(u) - 1.0
    ks = np.arange(1, v.size + 1)
    k = np.nonzero(u - css / ks > 0)[0][-1]
    theta = css[k] / (k + 1)
    w = np.maximum(v - theta, 0.0)
    return w / w.sum()


def ridge_solve(X, y, lam: float) -> np.ndarray:
    """argmin ``||y - X b||^2 + lam ||b||^2`` through the normal equations.

    ``y`` may be a matrix, in which case each column is solved independently.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if X.ndim != 2 or X.shape[0] < 1 or X.shape[1] < 1:
        raise ValueError(f"design matrix must be n x p with n, p >= 1, got {X.shape}")
    if y.shape[0] != X.shape[0]:
        raise LengthMismatch(f"y has {y.shape[0]} rows, X has {X.shape[0]}")
    if lam < 0:
        raise ValueError("ridge penalty must be >= 0")
    p = X.shape[1]
    A = X.T @ X
    A[np.diag_indices(p)] += lam
    try:
        c = scipy.linalg.cho_factor(A, lower=True, check_finite=False)
    except np.linalg.LinAlgError:
        raise Singular("X'X + lambda*I is not positive definite") from None
    if lam == 0:
        d = np.abs(np.diag(c[0]))
        if d.min() <= 1e-10 * d.max():
            raise Singular("X'X is rank deficient and lambda = 0")
    return scipy.linalg.cho_solve(c, X.T @ y, check_finite=False)


@dataclass(frozen=True)
class OptimizerConfig:
    """Settings for :func:`minimize`.

    ``max_iters`` counts optimizer steps in full-batch mode and epochs in
    mini-batch mode.
    """

    step_size: float = 0.01
    max_iters: int = 1000
    tolerance: float = 1e-8
    seed: int = 0
    batch_size: int | None = None
    method: str = "adam"
    beta1: float = 0.9
    beta2: float = 0.999
    patience: int = 100

    def __post_init__(self):
        if self.step_size <= 0:
            raise ValueError("step_size must be > 0")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if self.tolerance <= 0:
            raise ValueError("tolerance must be > 0")
        if self.method not in ("adam", "lbfgs"):
            raise ValueError(f"unknown method {self.method!r}")


def _checked(f, g):
    f = float(f)
    g = np.asarray(g, dtype=float)
    if not np.isfinite(f) or not np.all(np.isfinite(g)):
        raise NonFiniteObjective(f"objective returned non-finite value {f}")
    return f, g


def minimize(
    objective: Callable,
    init,
    cfg: OptimizerConfig = OptimizerConfig(),
    *,
    n_samples: int | None = None,
    monitor: Callable[[np.ndarray], float] | None = None,
    trace: list | None = None,
) -> np.ndarray:
    """Minimize a differentiable objective; returns the best parameters seen.

    ``objective(x)`` returns ``(value, gradient)``. When ``n_samples`` is
    given the objective is called as ``objective(x, idx)`` on seeded
    mini-batches of sample indices, one pass per epoch.

    ``monitor(x)`` optionally scores parameters after every epoch / step
    (for example a held-out loss); the returned parameters are those with the
    best score, which makes it an early-stopping rule. Without a monitor the
    training objective itself is the score. ``trace`` receives the running
    best score after each iteration, so it is non-increasing.
    """
    x = np.array(init, dtype=float)
    if cfg.method == "lbfgs":
        return _minimize_lbfgs(objective, x, cfg, trace)

    batched = n_samples is not None
    rng = np.random.default_rng(cfg.seed)

    def full(x):
        if batched:
            return _checked(*objective(x, np.arange(n_samples)))
        return _checked(*objective(x))

    def score(x, f_full=None):
        if monitor is not None:
            s = float(monitor(x))
            if not np.isfinite(s):
                raise NonFiniteObjective("monitor returned a non-finite score")
            return s
        return f_full if f_full is not None else full(x)[0]

    f0, g = full(x)
    best_x, best = x.copy(), score(x, f0)
    history = [best]
    m = np.zeros_like(x)
    v = np.zeros_like(x)
    b1, b2, eps = cfg.beta1, cfg.beta2, 1e-8
    step = 0
    for it in range(cfg.max_iters):
        if batched:
            order = rng.permutation(n_samples)
            bs = cfg.batch_size or n_samples
            for start in range(0, n_samples, bs):
                idx = np.sort(order[start:start + bs])
                _, gb = _checked(*objective(x, idx))
                step += 1
                m = b1 * m + (1 - b1) * gb
                v = b2 * v + (1 - b2) * gb * gb
                x = x - cfg.step_size * (m / (1 - b1**step)) / (np.sqrt(v / (1 - b2**step)) + eps)
            s = score(x)
        else:
            step += 1
            m = b1 * m + (1 - b1) * g
            v = b2 * v + (1 - b2) * g * g
            x = x - cfg.step_size * (m / (1 - b1**step)) / (np.sqrt(v / (1 - b2**step)) + eps)
            f, g = full(x)
            s = score(x, f)
        if s < best:
            best, best_x = s, x.copy()
        history.append(best)
        if trace is not None:
            trace.append(best)
        lag = cfg.patience if not batched else max(2, cfg.patience // 10)
        if len(history) > lag:
            old = history[-1 - lag]
            if old - best <= cfg.tolerance * max(abs(best), 1e-12):
                break
    return best_x


def _minimize_lbfgs(objective, x0, cfg: OptimizerConfig, trace):
    f0, _ = _checked(*objective(x0))

    def fun(x):
        f, g = objective(x)
        f = float(f)
        if not np.isfinite(f):
            return np.inf, np.zeros_like(x)
        return f, np.asarray(g, dtype=float)

    res = scipy.optimize.minimize(
        fun, x0, jac=True, method="L-BFGS-B",
        options={"maxiter": cfg.max_iters, "ftol": cfg.tolerance, "gtol": 1e-10},
    )
    x = res.x if np.isfinite(res.fun) and res.fun <= f0 else x0
    if trace is not None:
        trace.extend([f0, min(f0, float(res.fun))])
    return np.array(x, dtype=float)


def check_taus(taus) -> np.ndarray:
    taus = np.asarray(taus, dtype=float)
    if np.any((taus <= 0) | (taus >= 1)):
        raise BadTau(f"quantile levels must lie in (0, 1), got {taus}")
    if np.any(np.diff(taus) <= 0):
        raise UnsortedTaus("quantile levels must be strictly increasing")
    return taus


def pinball_loss(y, q_pred, tau):
    """Quantile loss ``tau*(y-q)`` if ``y >= q`` else ``(1-tau)*(q-y)``; broadcasts."""
    tau_arr = np.asarray(tau, dtype=float)
    if np.any((tau_arr <= 0) | (tau_arr >= 1)):
        raise BadTau(f"tau must lie in (0, 1), got {tau}")
    diff = np.asarray(y, dtype=float) - np.asarray(q_pred, dtype=float)
    out = np.maximum(tau_arr * diff, (tau_arr - 1.0) * diff)
    return float(out) if out.ndim == 0 else out


def pinball_grad(y, q_pred, tau):
    """Derivative of :func:`pinball_loss` with respect to ``q_pred``.

    At the kink ``y == q`` the subgradient ``0.5 - tau`` (the midpoint) is used.
    """
    diff = np.asarray(y, dtype=float) - np.asarray(q_pred, dtype=float)
    tau = np.asarray(tau, dtype=float)
    return np.where(diff > 0, -tau, np.where(diff < 0, 1.0 - tau, 0.5 - tau))


def crps_from_quantiles(y, quantile_preds, taus) -> float:
    """Quantile-averaged CRPS approximation: twice the mean pinball loss."""
    q = np.asarray(quantile_preds, dtype=float)
    taus = np.asarray(taus, dtype=float)
    if q.shape[-1] != taus.size:
        raise LengthMismatch(f"{q.shape[-1]} quantile predictions for {taus.size} levels")
    check_taus(taus)
    y = np.asarray(y, dtype=float)
    if y.ndim:
        y = y[..., None]
    return float(2.0 * np.mean(pinball_loss(y, q, taus)))
