"""Counterfactual forecasting for panels with one simultaneous intervention.

The package simulates panels with a known effect, fits global (pooled) and
local (per treated unit) counterfactual forecasters, and turns their
forecasts into treatment-effect estimates with a placebo rank test.
"""

from __future__ import annotations

__version__ = "0.1.0"

from .errors import CfPanelError
from .evaluate import build_report, effect_and_att, mase, placebo_test, relative_att, smape
from .panel import PanelDataset, SimulationTruth, UnitSeries, build_panel, split_pre_post
from .pipeline import MODELS, fit_model
from .synthgen import InterventionSpec, SynthConfig, generate_scenario_grid, simulate

__all__ = [
    "__version__",
    "CfPanelError",
    "PanelDataset",
    "UnitSeries",
    "SimulationTruth",
    "build_panel",
    "split_pre_post",
    "SynthConfig",
    "InterventionSpec",
    "simulate",
    "generate_scenario_grid",
    "MODELS",
    "fit_model",
    "smape",
    "mase",
    "effect_and_att",
    "relative_att",
    "placebo_test",
    "build_report",
]
