"""Synthetic panels: three-sine signal plus a long-memory Gaussian-process level.

Each series follows

    f(t) = base + b0(t) + b1(t) sin(2 pi t / 1) + b2(t) sin(2 pi t / 7) + b3(t) sin(2 pi t / 30)

for ``t = 1 .. length``, with ``b1, b2, b3 ~ U[5, 10]`` drawn independently
at every step and ``b0`` a Gaussian-process path with covariance
``|t1 - t2|**-1`` off the diagonal and 1 on it. An optional multiplicative
trend ``rate**t`` is applied before any intervention.

The intervention lowers post-period values of a random 30% of units by a
multiple of the pooled pre-period standard deviation that grows with the
decile the value falls in.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from functools import lru_cache

import numpy as np

from .errors import DegenerateSigma, TooShort
from .numerics import cholesky_psd
from .panel import PanelDataset, SimulationTruth, UnitSeries

__all__ = [
    "SynthConfig",
    "InterventionSpec",
    "Scenario",
    "gp_covariance",
    "sample_gp_beta0",
    "three_sine",
    "generate_series",
    "generate_values",
    "inject_intervention",
    "simulate",
    "generate_scenario_grid",
    "GRID_UNITS",
    "GRID_LENGTHS",
]

GRID_UNITS = (50, 300)
GRID_LENGTHS = (90, 420)

# spawn-key namespaces so unit draws and the treatment split never share a stream
_UNIT_STREAM = 0
_SPLIT_STREAM = 1


@dataclass(frozen=True)
class SynthConfig:
    n_units: int = 50
    length: int = 90
    trend: bool = False
    trend_rate: float = 1.00005
    seed: int = 0
    base_level: float = 100.0
    beta_range: tuple[float, float] = (5.0, 10.0)
    periods: tuple[float, float, float] = (1.0, 7.0, 30.0)

    def __post_init__(self):
        if self.n_units < 2:
            raise ValueError("need at least 2 units")
        if self.length <= 24:
            raise ValueError("length must exceed 24")
        if self.trend_rate <= 0:
            raise ValueError("trend_rate must be positive")

    @property
    def label(self) -> str:
        kind = "trend" if self.trend else "stationary"
        return f"{kind}_n{self.n_units}_T{self.length}_seed{self.seed}"


@dataclass(frozen=True)
class InterventionSpec:
    treat_fraction: float = 0.3
    post_len: int = 24
    decile_constants: tuple[float, ...] = (0.3, 0.6, 0.9, 1.2, 1.5)
    sigma: float | None = None

    def __post_init__(self):
        if not 0 < self.treat_fraction < 1:
            raise ValueError("treat_fraction must lie in (0, 1)")
        if len(self.decile_constants) != 5:
            raise ValueError("need one constant per decile pair (5)")
        if np.any(np.diff(self.decile_constants) < 0):
            raise ValueError("decile constants must be non-decreasing")

    @classmethod
    def null(cls, **kw) -> "InterventionSpec":
        """Same split and timing but no effect (an A/A panel)."""
        return cls(decile_constants=(0.0,) * 5, **kw)


@dataclass(frozen=True)
class Scenario:
    label: str
    config: SynthConfig
    panel: PanelDataset
    truth: SimulationTruth
    spec: InterventionSpec = field(default_factory=InterventionSpec)


def gp_covariance(length: int) -> np.ndarray:
    """Unrepaired covariance: 1 on the diagonal, ``1/|t1 - t2|`` elsewhere."""
    t = np.arange(1, length + 1, dtype=float)
    lag = np.abs(t[:, None] - t[None, :])
    with np.errstate(divide="ignore"):
        cov = np.where(lag == 0, 1.0, 1.0 / lag)
    return cov


@lru_cache(maxsize=8)
def _gp_factor(length: int) -> np.ndarray:
    L = cholesky_psd(gp_covariance(length)).L
    L.setflags(write=False)
    return L


def sample_gp_beta0(length: int, seed=0) -> np.ndarray:
    """One GP draw of the level term; ``seed`` may be an int, seed list or Generator."""
    if length < 1:
        raise TooShort("length must be >= 1")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    z = rng.standard_normal(length)
    return _gp_factor(length) @ z


def three_sine(t, beta0, b1, b2, b3, base: float = 100.0, periods=(1.0, 7.0, 30.0)):
    """The deterministic signal given all coefficients (each scalar or per-step)."""
    t = np.asarray(t, dtype=float)
    p1, p2, p3 = periods
    return (
        base
        + np.asarray(beta0, dtype=float)
        + np.asarray(b1, dtype=float) * np.sin(2 * np.pi * t / p1)
        + np.asarray(b2, dtype=float) * np.sin(2 * np.pi * t / p2)
        + np.asarray(b3, dtype=float) * np.sin(2 * np.pi * t / p3)
    )


def _unit_rng(cfg: SynthConfig, unit_seed: int) -> np.random.Generator:
    ss = np.random.SeedSequence(cfg.seed, spawn_key=(_UNIT_STREAM, int(unit_seed)))
    return np.random.default_rng(ss)


def generate_series(cfg: SynthConfig, unit_seed: int) -> np.ndarray:
    """One unit's series; randomness depends only on ``(cfg.seed, unit_seed)``."""
    rng = _unit_rng(cfg, unit_seed)
    n = cfg.length
    t = np.arange(1, n + 1)
    beta0 = sample_gp_beta0(n, rng)
    lo, hi = cfg.beta_range
    betas = rng.uniform(lo, hi, size=(3, n))
    y = three_sine(t, beta0, *betas, base=cfg.base_level, periods=cfg.periods)
    if cfg.trend:
        y = y * cfg.trend_rate ** t.astype(float)
    return y


def generate_values(cfg: SynthConfig) -> np.ndarray:
    return np.vstack([generate_series(cfg, i) for i in range(cfg.n_units)])


def _pair_groups(values: np.ndarray, reference: np.ndarray) -> np.ndarray:
    # decile of each value under the reference distribution, folded into
    # five consecutive pairs; out-of-range values land in the end groups
    thresholds = np.quantile(reference, np.linspace(0.1, 0.9, 9))
    decile = np.searchsorted(thresholds, values, side="right")
    return decile // 2


def inject_intervention(
    values,
    spec: InterventionSpec = InterventionSpec(),
    seed: int = 0,
    unit_ids=None,
) -> tuple[PanelDataset, SimulationTruth, InterventionSpec]:
    """Split units 7:3, then lower treated post-period values by decile-graded amounts.

    Returns the panel, the stored true counterfactuals and the spec with the
    computed ``sigma`` filled in. sigma is the sample (n-1) standard
    deviation of the pooled treated pre-period values, and the decile
    thresholds come from that same pooled sample.
    """
    values = np.asarray(values, dtype=float)
    n, length = values.shape
    if spec.post_len >= length:
        raise TooShort(f"post_len {spec.post_len} must be shorter than length {length}")
    n_treated = int(round(n * spec.treat_fraction))
    if n_treated < 1 or n_treated >= n:
        raise ValueError(f"{n} units with fraction {spec.treat_fraction} leaves an empty group")
    if unit_ids is None:
        width = len(str(n - 1))
        unit_ids = [f"u{i:0{width}d}" for i in range(n)]
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(_SPLIT_STREAM,)))
    treated_idx = np.sort(rng.choice(n, size=n_treated, replace=False))
    mask = np.zeros(n, dtype=bool)
    mask[treated_idx] = True

    t0 = length - spec.post_len
    pooled_pre = values[mask, :t0].ravel()
    sigma = float(np.std(pooled_pre, ddof=1))
    if not sigma > 0:
        raise DegenerateSigma("treated pre-period values have zero spread")
    constants = np.asarray(spec.decile_constants, dtype=float)

    out = values.copy()
    post = values[mask, t0:]
    shift = constants[_pair_groups(post, pooled_pre)] * sigma
    out[mask, t0:] = post - shift

    units = tuple(UnitSeries(uid, row, bool(m)) for uid, row, m in zip(unit_ids, out, mask))
    panel = PanelDataset(units, t0)
    counterfactuals = {unit_ids[i]: values[i, t0:].copy() for i in treated_idx}
    true_att = float(np.mean(out[mask, t0:] - values[mask, t0:]))
    return panel, SimulationTruth(counterfactuals, true_att), replace(spec, sigma=sigma)


def simulate(cfg: SynthConfig, spec: InterventionSpec = InterventionSpec()) -> Scenario:
    """Generate one scenario: series, split and intervention all keyed on ``cfg.seed``."""
    panel, truth, spec = inject_intervention(generate_values(cfg), spec, seed=cfg.seed)
    return Scenario(cfg.label, cfg, panel, truth, spec)


def generate_scenario_grid(seeds, spec: InterventionSpec = InterventionSpec()) -> list[Scenario]:
    """{50, 300} units x {90, 420} steps x {stationary, trend} for every seed."""
    seeds = list(seeds)
    if not seeds:
        raise ValueError("need at least one seed")
    out = []
    for seed in seeds:
        for trend in (False, True):
            for n_units in GRID_UNITS:
                for length in GRID_LENGTHS:
                    cfg = SynthConfig(n_units=n_units, length=length, trend=trend, seed=seed)
                    out.append(simulate(cfg, spec))
    return out
