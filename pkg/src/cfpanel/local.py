"""Synthetic control on the simplex and its ridge-augmented (ASCM) extension.

Both estimators are local: they are fitted once per treated unit from that
unit's pre-period path and the control units' paths.

Shapes follow the regression view: ``controls_pre`` is ``(t0, J)`` with one
column per donor, ``controls_post`` is ``(h, J)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import LengthMismatch, TooFewDonors
from .numerics import project_simplex, ridge_solve

__all__ = [
    "ScWeights",
    "AugmentedModel",
    "DEFAULT_LAMBDA_GRID",
    "fit_sc",
    "fit_ascm",
    "ridge_loo_error",
]

DEFAULT_LAMBDA_GRID = tuple(np.logspace(-3, 3, 13))


@dataclass(frozen=True)
class ScWeights:
    donor_ids: tuple[str, ...]
    gamma: np.ndarray
    intercept: float
    residuals: np.ndarray
    n_iter: int = 0

    def predict(self, controls) -> np.ndarray:
        return np.asarray(controls, dtype=float) @ self.gamma + self.intercept

    def to_dict(self) -> dict:
        return {
            "donor_ids": list(self.donor_ids),
            "gamma": self.gamma.tolist(),
            "intercept": self.intercept,
            "residuals": self.residuals.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ScWeights":
        return cls(tuple(d["donor_ids"]), np.asarray(d["gamma"]), float(d["intercept"]),
                   np.asarray(d["residuals"]))


@dataclass(frozen=True)
class AugmentedModel:
    """SC weights plus a ridge correction expressed as extra donor weights.

    ``ridge_coeffs`` sums to zero, so ``gamma + ridge_coeffs`` is an affine
    (possibly negative) weighting of the donors.
    """

    base: ScWeights
    ridge_coeffs: np.ndarray
    lam: float
    bias_estimate: np.ndarray = field(default_factory=lambda: np.empty(0))
    cv_errors: dict = field(default_factory=dict)

    @property
    def weights(self) -> np.ndarray:
        return self.base.gamma + self.ridge_coeffs

    def predict(self, controls_post) -> np.ndarray:
        controls_post = np.asarray(controls_post, dtype=float)
        return self.base.predict(controls_post) + controls_post @ self.ridge_coeffs

    def to_dict(self) -> dict:
        return {
            "base": self.base.to_dict(),
            "ridge_coeffs": self.ridge_coeffs.tolist(),
            "lambda": self.lam,
            "bias_estimate": self.bias_estimate.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "AugmentedModel":
        return cls(ScWeights.from_dict(d["base"]), np.asarray(d["ridge_coeffs"]),
                   float(d["lambda"]), np.asarray(d["bias_estimate"]))


def fit_sc(
    treated_pre,
    controls_pre,
    donor_ids=None,
    *,
    intercept: bool = False,
    tol: float = 1e-10,
    max_iter: int = 200_000,
) -> ScWeights:
    """Simplex weights minimizing ``||y - C w||^2`` by accelerated projected gradient.

    Starts from uniform weights and stops once the relative objective change
    drops below ``tol``. With ``intercept=True`` both sides are demeaned first
    and the level difference is kept as the intercept.
    """
    y = np.asarray(treated_pre, dtype=float)
    C = np.asarray(controls_pre, dtype=float)
    if C.ndim != 2 or C.shape[0] != y.size:
        raise LengthMismatch(f"controls_pre must be ({y.size}, J), got {C.shape}")
    J = C.shape[1]
    if J < 2:
        raise TooFewDonors(f"synthetic control needs >= 2 donors, got {J}")
    if donor_ids is None:
        donor_ids = tuple(f"d{j}" for j in range(J))
    if intercept:
        yc, Cc = y - y.mean(), C - C.mean(axis=0)
    else:
        yc, Cc = y, C
    # weights sum to one, so removing the donors' mean path from both sides
    # leaves the objective unchanged on the simplex and drops the shared
    # level direction that dominates the curvature
    m = Cc.mean(axis=1)
    yc, Cc = yc - m, Cc - m[:, None]

    G = Cc.T @ Cc
    b = Cc.T @ yc
    lip = 2.0 * np.linalg.eigvalsh(G)[-1]
    step = 1.0 / lip if lip > 0 else 1.0
    const = float(yc @ yc)

    def obj(w):
        return float(w @ G @ w - 2.0 * b @ w + const)

    w = np.full(J, 1.0 / J)
    z, t = w.copy(), 1.0
    f_old = obj(w)
    it = quiet = 0
    for it in range(1, max_iter + 1):
        grad = 2.0 * (G @ z - b)
        w_new = project_simplex(z - step * grad)
        f_new = obj(w_new)
        if f_new > f_old:
            # momentum overshot: restart from the last accepted point
            z, t = w.copy(), 1.0
            grad = 2.0 * (G @ z - b)
            w_new = project_simplex(z - step * grad)
            f_new = obj(w_new)
        t_new = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t * t))
        z = w_new + ((t - 1.0) / t_new) * (w_new - w)
        change = abs(f_old - f_new)
        w, t, f_old = w_new, t_new, min(f_new, f_old)
        # a single tiny step happens right after restarts; require a streak
        quiet = quiet + 1 if change <= tol * max(abs(f_new), 1e-300) else 0
        if quiet >= 25 or change == 0.0:
            break
    lam0 = float(y.mean() - (C @ w).mean()) if intercept else 0.0
    residuals = y - C @ w - lam0
    return ScWeights(tuple(donor_ids), w, lam0, residuals, it)


def _centered(X):
    mu = X.mean(axis=0)
    return X - mu, mu


def ridge_loo_error(X0, Y0post, lam: float) -> float:
    """Leave-one-control-out squared error of the ridge outcome model.

    ``X0`` is ``(J, t0)`` pre-period rows, ``Y0post`` is ``(J, h)``.
    """
    J = X0.shape[0]
    total = 0.0
    for j in range(J):
        keep = np.arange(J) != j
        Xc, mx = _centered(X0[keep])
        Yc, my = _centered(Y0post[keep])
        eta = ridge_solve(Xc, Yc, lam)
        pred = my + (X0[j] - mx) @ eta
        total += float(np.sum((Y0post[j] - pred) ** 2))
    return total


def fit_ascm(
    treated_pre,
    controls_pre,
    controls_post,
    lambda_grid=DEFAULT_LAMBDA_GRID,
    donor_ids=None,
    *,
    sc: ScWeights | None = None,
    lam: float | None = None,
) -> AugmentedModel:
    """Ridge-augmented synthetic control for one treated unit.

    For each post step the control outcomes are regressed (ridge, centred)
    on the controls' pre-period paths; the fitted slope applied to the
    treated unit's remaining pre-period imbalance ``x1 - X0' gamma`` is the
    bias correction added to the SC prediction. ``lam`` is chosen from
    ``lambda_grid`` by leave-one-control-out error unless given.
    """
    x1 = np.asarray(treated_pre, dtype=float)
    C = np.asarray(controls_pre, dtype=float)
    P = np.asarray(controls_post, dtype=float)
    if P.ndim != 2 or P.shape[1] != C.shape[1] or P.shape[0] < 1:
        raise LengthMismatch(f"controls_post must be (h, {C.shape[1]}), got {P.shape}")
    if sc is None:
        sc = fit_sc(x1, C, donor_ids)
    X0, Y0 = C.T, P.T
    cv = {}
    if lam is None:
        grid = [float(v) for v in lambda_grid]
        cv = {v: ridge_loo_error(X0, Y0, v) for v in grid}
        lam = min(grid, key=lambda v: (cv[v], v))
    Xc, _ = _centered(X0)
    Yc, _ = _centered(Y0)
    imbalance = x1 - X0.T @ sc.gamma
    eta = ridge_solve(Xc, Yc, lam)  # (t0, h): one ridge fit per post step
    bias = imbalance @ eta
    # same correction as donor weights: Xc (Xc'Xc + lam I)^-1 imbalance,
    # which sums to zero because Xc is column-centred
    A = Xc.T @ Xc
    A[np.diag_indices_from(A)] += lam
    ridge_coeffs = Xc @ np.linalg.lstsq(A, imbalance, rcond=None)[0]
    return AugmentedModel(sc, ridge_coeffs, float(lam), bias, cv)
