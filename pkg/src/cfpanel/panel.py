"""Panel data model: unit series sharing one time axis and one intervention time.

Time is a 0-based integer index throughout. Calendar periods are mapped to
indices at ingestion (see :mod:`cfpanel.io`) and only carried here as optional
labels for writing files back out.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import (
    BadT0,
    LengthMismatch,
    NoControl,
    NoTreated,
    TooShort,
    UnknownUnit,
)

__all__ = [
    "UnitSeries",
    "PanelDataset",
    "PanelView",
    "SimulationTruth",
    "Window",
    "build_panel",
    "split_pre_post",
    "sliding_windows",
    "window_arrays",
    "seasonal_profile",
    "deseasonalize",
    "tile_profile",
]


def _frozen(a, name: str) -> np.ndarray:
    arr = np.array(a, dtype=float)  # always a private copy
    if arr.ndim != 1:
        raise LengthMismatch(f"{name} must be one-dimensional, got shape {arr.shape}")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class UnitSeries:
    """One unit's outcome path, its treatment flag and optional covariates."""

    unit_id: str
    values: np.ndarray
    treated: bool = False
    covariates: Mapping[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        values = _frozen(self.values, f"values of {self.unit_id!r}")
        if values.size == 0:
            raise TooShort(f"unit {self.unit_id!r} has no values")
        if not np.all(np.isfinite(values)):
            bad = int(np.flatnonzero(~np.isfinite(values))[0])
            raise ValueError(f"unit {self.unit_id!r} has a missing value at index {bad}")
        covs = {}
        for name, seq in self.covariates.items():
            arr = _frozen(seq, f"covariate {name!r} of {self.unit_id!r}")
            if arr.shape != values.shape:
                raise LengthMismatch(
                    f"covariate {name!r} of unit {self.unit_id!r} has length "
                    f"{arr.size}, values have {values.size}"
                )
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"covariate {name!r} of unit {self.unit_id!r} has gaps")
            covs[name] = arr
        object.__setattr__(self, "unit_id", str(self.unit_id))
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "treated", bool(self.treated))
        object.__setattr__(self, "covariates", covs)

    def __len__(self) -> int:
        return self.values.size


@dataclass(frozen=True)
class PanelDataset:
    """N unit series of common length T with intervention time ``t0``.

    ``t0`` is the index of the first post-intervention step, so the
    pre-period is ``[0, t0)`` and the post-period ``[t0, T)``.
    """

    units: tuple[UnitSeries, ...]
    t0: int
    period_labels: tuple[str, ...] | None = None

    def __post_init__(self):
        units = tuple(self.units)
        object.__setattr__(self, "units", units)
        if not units:
            raise TooShort("panel has no units")
        lengths = {len(u) for u in units}
        if len(lengths) != 1:
            raise LengthMismatch(f"units have differing lengths {sorted(lengths)}")
        ids = [u.unit_id for u in units]
        if len(set(ids)) != len(ids):
            raise LengthMismatch("duplicate unit ids in panel")
        T = lengths.pop()
        t0 = int(self.t0)
        if not 0 < t0 < T:
            raise BadT0(f"t0={t0} must satisfy 0 < t0 < T={T}")
        object.__setattr__(self, "t0", t0)
        if not any(u.treated for u in units):
            raise NoTreated("panel has no treated unit")
        if all(u.treated for u in units):
            raise NoControl("panel has no control unit")
        names = set(units[0].covariates)
        for u in units[1:]:
            if set(u.covariates) != names:
                raise LengthMismatch(f"unit {u.unit_id!r} carries a different covariate set")
        if self.period_labels is not None:
            labels = tuple(str(p) for p in self.period_labels)
            if len(labels) != T:
                raise LengthMismatch(f"{len(labels)} period labels for length {T}")
            object.__setattr__(self, "period_labels", labels)

    @property
    def length(self) -> int:
        return len(self.units[0])

    @property
    def horizon(self) -> int:
        return self.length - self.t0

    @cached_property
    def unit_ids(self) -> tuple[str, ...]:
        return tuple(u.unit_id for u in self.units)

    @cached_property
    def values(self) -> np.ndarray:
        """Read-only ``(N, T)`` matrix of outcomes in unit order."""
        out = np.vstack([u.values for u in self.units])
        out.setflags(write=False)
        return out

    @cached_property
    def treated_mask(self) -> np.ndarray:
        out = np.array([u.treated for u in self.units])
        out.setflags(write=False)
        return out

    @property
    def treated_ids(self) -> list[str]:
        return [u.unit_id for u in self.units if u.treated]

    @property
    def control_ids(self) -> list[str]:
        return [u.unit_id for u in self.units if not u.treated]

    @property
    def covariate_names(self) -> list[str]:
        return sorted(self.units[0].covariates)

    def covariate_matrix(self, name: str) -> np.ndarray:
        return np.vstack([u.covariates[name] for u in self.units])

    @cached_property
    def _index(self) -> dict[str, int]:
        return {uid: i for i, uid in enumerate(self.unit_ids)}

    def index_of(self, unit_id: str) -> int:
        try:
            return self._index[unit_id]
        except KeyError:
            raise UnknownUnit(f"unit {unit_id!r} is not in the panel") from None

    def unit(self, unit_id: str) -> UnitSeries:
        return self.units[self.index_of(unit_id)]

    def replace_values(self, values: np.ndarray) -> "PanelDataset":
        """Copy of the panel with a new ``(N, T)`` outcome matrix."""
        values = np.asarray(values, dtype=float)
        if values.shape != self.values.shape:
            raise LengthMismatch(f"expected shape {self.values.shape}, got {values.shape}")
        units = tuple(
            UnitSeries(u.unit_id, row, u.treated, u.covariates)
            for u, row in zip(self.units, values)
        )
        return PanelDataset(units, self.t0, self.period_labels)

    def with_covariates(self, covariates: Mapping[str, np.ndarray]) -> "PanelDataset":
        """Copy with covariates replaced by ``name -> (N, T)`` matrices."""
        units = tuple(
            UnitSeries(u.unit_id, u.values, u.treated, {k: m[i] for k, m in covariates.items()})
            for i, u in enumerate(self.units)
        )
        return PanelDataset(units, self.t0, self.period_labels)


@dataclass(frozen=True)
class PanelView:
    """Read-only slice ``[start, stop)`` of a panel's time axis."""

    unit_ids: tuple[str, ...]
    treated_mask: np.ndarray
    values: np.ndarray
    covariates: Mapping[str, np.ndarray]
    start: int

    @property
    def length(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class SimulationTruth:
    """True untreated post-period paths of the treated units of a simulation."""

    counterfactuals: Mapping[str, np.ndarray]
    true_att: float

    def check(self, panel: PanelDataset, atol: float = 1e-9) -> None:
        if set(self.counterfactuals) != set(panel.treated_ids):
            raise UnknownUnit("truth keys differ from the panel's treated ids")
        diffs = [
            panel.unit(uid).values[panel.t0:] - np.asarray(cf)
            for uid, cf in self.counterfactuals.items()
        ]
        att = float(np.mean(diffs))
        if abs(att - self.true_att) > atol * max(1.0, abs(att)):
            raise ValueError(f"stored true_att {self.true_att} != recomputed {att}")


@dataclass(frozen=True)
class Window:
    unit_id: str
    input: np.ndarray
    target: np.ndarray
    exogenous: np.ndarray
    position: int


def build_panel(
    records: Iterable[tuple[str, bool, Sequence[float], Mapping[str, Sequence[float]] | None]],
    t0: int,
    period_labels: Sequence[str] | None = None,
) -> PanelDataset:
    """Validate ``(unit_id, treated, values, covariates)`` records into a panel.

    Unit order follows the input order.
    """
    units = []
    for rec in records:
        unit_id, treated, values = rec[0], rec[1], rec[2]
        covs = rec[3] if len(rec) > 3 and rec[3] is not None else {}
        units.append(UnitSeries(unit_id, values, treated, covs))
    if not units:
        raise TooShort("no records given")
    lengths = [len(u) for u in units]
    if len(set(lengths)) != 1:
        first = lengths[0]
        bad = next(u for u in units if len(u) != first)
        raise LengthMismatch(
            f"unit {bad.unit_id!r} has length {len(bad)}, expected {first}"
        )
    return PanelDataset(tuple(units), t0, tuple(period_labels) if period_labels else None)


def _view(panel: PanelDataset, start: int, stop: int) -> PanelView:
    values = panel.values[:, start:stop]  # basic slice: a view, never a copy
    covs = {}
    for name in panel.covariate_names:
        m = panel.covariate_matrix(name)[:, start:stop]
        m.setflags(write=False)
        covs[name] = m
    return PanelView(panel.unit_ids, panel.treated_mask, values, covs, start)


def split_pre_post(panel: PanelDataset) -> tuple[PanelView, PanelView]:
    """Views over ``[0, t0)`` and ``[t0, T)``."""
    return _view(panel, 0, panel.t0), _view(panel, panel.t0, panel.length)


def window_arrays(
    values: np.ndarray, W: int, h: int, limit: int
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Stride-1 windows of a 1-D series as arrays.

    Returns ``(inputs, targets, positions)`` with shapes ``(n, W)``,
    ``(n, h)`` and ``(n,)`` where ``n = limit - W - h + 1`` and ``positions``
    holds the index of each window's first target step.
    """
    values = np.asarray(values, dtype=float)
    if W < 1 or h < 1:
        raise ValueError("window width and horizon must be >= 1")
    if limit > values.size:
        raise TooShort(f"limit {limit} exceeds series length {values.size}")
    if limit < W + h:
        raise TooShort(f"need at least W + h = {W + h} steps before the limit, have {limit}")
    blocks = np.lib.stride_tricks.sliding_window_view(values[:limit], W + h)
    positions = np.arange(W, limit - h + 1)
    return blocks[:, :W].copy(), blocks[:, W:].copy(), positions


def sliding_windows(series: UnitSeries, W: int, h: int, limit: int) -> list[Window]:
    """All stride-1 (input, target) windows whose target ends at or before ``limit``."""
    inputs, targets, positions = window_arrays(series.values, W, h, limit)
    empty = np.empty(0)
    return [
        Window(series.unit_id, x, y, empty, int(p))
        for x, y, p in zip(inputs, targets, positions)
    ]


def seasonal_profile(values, S: int) -> np.ndarray:
    """Per-phase means of the demeaned series; phase ``k`` covers indices ``≡ k (mod S)``.

    The profile is re-centred so it sums to zero even when the phases have
    unequal counts.
    """
    values = np.asarray(values, dtype=float)
    if S < 1:
        raise ValueError("season length must be >= 1")
    if values.size < S:
        raise TooShort(f"series of length {values.size} is shorter than the season {S}")
    centred = values - values.mean()
    phase = np.arange(values.size) % S
    sums = np.bincount(phase, weights=centred, minlength=S)
    counts = np.bincount(phase, minlength=S)
    profile = sums / counts
    return profile - profile.mean()


def tile_profile(profile: np.ndarray, start: int, length: int) -> np.ndarray:
    """Profile values for indices ``start, ..., start + length - 1``."""
    profile = np.asarray(profile, dtype=float)
    return profile[(start + np.arange(length)) % profile.size]


def deseasonalize(values, profile: np.ndarray, start: int = 0) -> np.ndarray:
    values = np.asarray(values, dtype=float)
    return values - tile_profile(profile, start, values.size)
