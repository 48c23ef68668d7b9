"""Pooled training windows for the global forecasters."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import TooShort
from .panel import PanelDataset, deseasonalize, seasonal_profile, tile_profile, window_arrays


@dataclass
class WindowSet:
    """Windows from every unit's pre-period, stacked.

    ``inputs``/``targets`` are already deseasonalized (when a season is
    used) but not level-normalized; ``covariates`` is ``(n, W, k)``.
    """

    unit_index: np.ndarray
    positions: np.ndarray
    inputs: np.ndarray
    targets: np.ndarray
    seasonal: np.ndarray
    covariates: np.ndarray
    holdout: np.ndarray  # boolean mask of held-out windows

    def __len__(self) -> int:
        return self.inputs.shape[0]

    def subset(self, mask) -> "WindowSet":
        return WindowSet(*(a[mask] for a in (
            self.unit_index, self.positions, self.inputs, self.targets,
            self.seasonal, self.covariates, self.holdout)))


def resolve_width(window_w: int | None, season: int, h: int, t0: int, seasons: int) -> int:
    """Explicit width, or ``seasons`` seasons shrunk until a few windows fit in ``[0, t0)``."""
    if window_w is not None:
        return int(window_w)
    S = max(season, 1)
    W = seasons * S
    # keep at least one season's worth of windows per unit
    return max(S, min(W, t0 - h - S + 1))


def unit_profiles(panel: PanelDataset, season: int) -> np.ndarray:
    """``(N, S)`` seasonal profiles from each unit's pre-period (zeros when ``season <= 1``)."""
    if season <= 1:
        return np.zeros((len(panel.units), 1))
    return np.vstack([seasonal_profile(row[:panel.t0], season) for row in panel.values])


def covariate_cube(panel: PanelDataset) -> np.ndarray:
    """``(N, T, k)`` stack of the panel's covariates in name order."""
    names = panel.covariate_names
    if not names:
        return np.zeros((len(panel.units), panel.length, 0))
    return np.stack([panel.covariate_matrix(n) for n in names], axis=-1)


def build_windows(
    panel: PanelDataset,
    W: int,
    h: int,
    profiles: np.ndarray,
    holdout_frac: float = 0.1,
) -> WindowSet:
    """Stride-1 windows over ``[0, t0)`` for all units, treated and control alike."""
    t0 = panel.t0
    if t0 < W + h:
        raise TooShort(
            f"pre-period of {t0} steps is shorter than window {W} + horizon {h}"
        )
    covs = covariate_cube(panel)
    parts = {k: [] for k in ("u", "p", "x", "y", "s", "c", "hold")}
    for i, row in enumerate(panel.values):
        des = deseasonalize(row[:t0], profiles[i])
        x, y, pos = window_arrays(des, W, h, t0)
        n = pos.size
        n_hold = min(max(1, math.ceil(holdout_frac * n)), n - 1) if holdout_frac > 0 and n > 1 else 0
        hold = np.zeros(n, dtype=bool)
        if n_hold:
            hold[-n_hold:] = True
        seas = np.vstack([tile_profile(profiles[i], p, h) for p in pos])
        cw = np.stack([covs[i, p - W:p, :] for p in pos]) if covs.shape[2] else np.zeros((n, W, 0))
        parts["u"].append(np.full(n, i))
        parts["p"].append(pos)
        parts["x"].append(x)
        parts["y"].append(y)
        parts["s"].append(seas)
        parts["c"].append(cw)
        parts["hold"].append(hold)
    return WindowSet(*(np.concatenate(parts[k]) for k in ("u", "p", "x", "y", "s", "c", "hold")))


def last_window(panel: PanelDataset, unit: int, W: int, h: int, profiles: np.ndarray):
    """The final pre-period input window of one unit, ready for a forecast."""
    t0 = panel.t0
    row = panel.values[unit]
    des = deseasonalize(row[:t0], profiles[unit])
    x = des[t0 - W:t0]
    seas = tile_profile(profiles[unit], t0, h)
    covs = covariate_cube(panel)[unit, t0 - W:t0, :]
    return x, seas, covs
