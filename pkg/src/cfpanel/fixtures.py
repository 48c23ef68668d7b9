"""A deterministic, real-world-shaped study fixture shipped with the package.

Fifty state-like units of monthly retail electricity prices (cents/kWh)
from 1990-01 to 1999-12, with a gas-price and an income covariate. Nine
units are treated from 1998-01: their post-period prices are cut by 7%.
The treated set is listed in the study config, so it can be changed
without touching code.

The treated units are rescaled so their mean price over 1997 (the last
pre-intervention year) is 11.36. Dividing an ATT of -0.795 by that mean
gives the headline -7% relative effect.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

from .io import (
    PANEL_COLUMNS,
    COVARIATE_COLUMNS,
    _csv_text,
    atomic_write_text,
    join_covariates,
    read_covariates_csv,
    read_panel_csv,
    table_to_panel,
)
from .panel import PanelDataset

__all__ = [
    "STATES",
    "TREATED_STATES",
    "FIXTURE_START",
    "FIXTURE_T0",
    "TREATED_PRE_MEAN",
    "REFERENCE_ATT",
    "FixturePaths",
    "build_price_fixture",
    "write_price_fixture",
    "fixture_paths",
    "load_price_fixture",
]

STATES = (
    "AK", "AL", "AR", "AZ", "CA", "CO", "CT", "DE", "FL", "GA",
    "HI", "IA", "ID", "IL", "IN", "KS", "KY", "LA", "MA", "MD",
    "ME", "MI", "MN", "MO", "MS", "MT", "NC", "ND", "NE", "NH",
    "NJ", "NM", "NV", "NY", "OH", "OK", "OR", "PA", "RI", "SC",
    "SD", "TN", "TX", "UT", "VA", "VT", "WA", "WI", "WV", "WY",
)
TREATED_STATES = ("CA", "CT", "IL", "MD", "ME", "NJ", "NY", "PA", "RI")
FIXTURE_START = "1990-01"
FIXTURE_T0 = "1998-01"
TREATED_PRE_MEAN = 11.36  # treated mean over 1997, cents/kWh
REFERENCE_ATT = -0.795  # cents/kWh; -0.795 / 11.36 is about -7%
EFFECT_FRACTION = 0.07
_MONTHS = 120
_T0 = 96
_DIGITS = 4


def _month_labels() -> list[str]:
    return [f"{1990 + k // 12:04d}-{k % 12 + 1:02d}" for k in range(_MONTHS)]


def build_price_fixture(seed: int = 1998):
    """``(prices, gas, income, treated_mask)`` as ``(50, 120)`` arrays, before rounding."""
    rng = np.random.default_rng(seed)
    n, T = len(STATES), _MONTHS
    t = np.arange(T)
    treated = np.isin(STATES, TREATED_STATES)

    # national fuel-cost factor shared by every state, plus state offsets
    national = np.cumsum(rng.normal(0.0, 0.04, T))
    gas = 4.0 + national + rng.normal(0.0, 0.3, (n, 1)) + rng.normal(0.0, 0.08, (n, T))
    income = (18.0 + rng.normal(0.0, 2.5, (n, 1))) * 1.004 ** t + rng.normal(0.0, 0.05, (n, T))

    level = np.where(treated, rng.uniform(9.5, 13.0, n), rng.uniform(5.5, 11.0, n))
    season = np.sin(2 * np.pi * (t - 4) / 12)  # summer peak
    amp = 0.03 * level
    noise = np.zeros((n, T))
    for k in range(1, T):
        noise[:, k] = 0.6 * noise[:, k - 1] + rng.normal(0.0, 0.06, n)
    growth = 1.0 + 0.002 * (t / 12.0)
    prices = (level[:, None] * growth + amp[:, None] * season
              + 0.15 * (gas - gas[:, :1]) + noise)

    # pin the treated mean over the last pre-intervention year
    pre_year = prices[treated, _T0 - 12:_T0].mean()
    prices[treated] *= TREATED_PRE_MEAN / pre_year
    prices[treated, _T0:] *= 1.0 - EFFECT_FRACTION
    return prices, gas, income, treated


@dataclass(frozen=True)
class FixturePaths:
    panel: Path
    covariates: Path
    study: Path
    info: Path


def fixture_paths(directory=None) -> FixturePaths:
    d = Path(directory) if directory is not None else Path(str(resources.files("cfpanel") / "data"))
    return FixturePaths(d / "prices_panel.csv", d / "prices_covariates.csv",
                        d / "prices_study.json", d / "prices_fixture.json")


def write_price_fixture(directory, seed: int = 1998) -> FixturePaths:
    """Regenerate the fixture files; values are rounded to four decimals."""
    paths = fixture_paths(directory)
    prices, gas, income, treated = build_price_fixture(seed)
    labels = _month_labels()

    def fmt(v):
        return f"{v:.{_DIGITS}f}"

    rows = ((s, labels[k], fmt(prices[i, k])) for i, s in enumerate(STATES) for k in range(_MONTHS))
    atomic_write_text(paths.panel, _csv_text(PANEL_COLUMNS, rows))
    cov_rows = []
    for i, s in enumerate(STATES):
        for name, M in (("gas_price", gas), ("income", income)):
            cov_rows.extend((s, labels[k], name, fmt(M[i, k])) for k in range(_MONTHS))
    atomic_write_text(paths.covariates, _csv_text(COVARIATE_COLUMNS, cov_rows))

    rounded = np.round(prices, _DIGITS)
    study = {
        "panel": paths.panel.name,
        "covariates": [paths.covariates.name],
        "t0": FIXTURE_T0,
        "treated_units": list(TREATED_STATES),
        "season": 12,
        "seed": seed,
        "output_dir": "out",
        "models": {"probcp": {}, "mixer": {}, "ascm": {}, "carima": {}},
    }
    atomic_write_text(paths.study, json.dumps(study, indent=2) + "\n")
    info = {
        "seed": seed,
        "units": len(STATES),
        "periods": [labels[0], labels[-1]],
        "t0": FIXTURE_T0,
        "t0_index": _T0,
        "treated_units": list(TREATED_STATES),
        "effect_fraction": -EFFECT_FRACTION,
        "treated_pre_year_mean": round(float(rounded[treated, _T0 - 12:_T0].mean()), 6),
        "injected_att": round(float(np.mean(
            rounded[treated, _T0:] - rounded[treated, _T0:] / (1 - EFFECT_FRACTION))), 6),
    }
    atomic_write_text(paths.info, json.dumps(info, indent=2) + "\n")
    return paths


def load_price_fixture(with_covariates: bool = True, directory=None) -> PanelDataset:
    """The bundled fixture as a panel (t0 = index of 1998-01)."""
    paths = fixture_paths(directory)
    panel = table_to_panel(read_panel_csv(paths.panel), FIXTURE_T0, TREATED_STATES)
    if with_covariates:
        panel = join_covariates(panel, read_covariates_csv(paths.covariates))
    return panel
