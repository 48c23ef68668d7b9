from __future__ import annotations

import numpy as np
import pytest

from cfpanel.panel import PanelDataset, UnitSeries


def make_panel(values, treated, t0, covariates=None, labels=None) -> PanelDataset:
    values = np.asarray(values, dtype=float)
    ids = [f"u{i}" for i in range(values.shape[0])]
    covs = covariates or {}
    units = tuple(
        UnitSeries(uid, row, bool(tr), {k: m[i] for k, m in covs.items()})
        for i, (uid, row, tr) in enumerate(zip(ids, values, treated))
    )
    return PanelDataset(units, t0, labels)


@pytest.fixture
def small_panel():
    rng = np.random.default_rng(0)
    values = 10 + rng.normal(size=(4, 12))
    return make_panel(values, [True, False, False, False], 9)
