"""File formats: panel, covariate and truth CSVs, scenario manifests, study configs.

Periods in files may be plain integers, months (``YYYY-MM``) or days
(``YYYY-MM-DD``). All rows of one file must use the same kind, and every
unit must cover the same contiguous run of periods. Internally periods
become 0-based indices counted from the earliest one.
"""

from __future__ import annotations

import csv
import datetime as _dt
import json
import os
import re
import tempfile
import urllib.error
import urllib.parse
import urllib.request
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

import numpy as np

from .errors import (
    AuthError,
    BadT0,
    CoverageGap,
    DuplicateKey,
    GapInPeriods,
    HttpError,
    MissingColumn,
    SchemaDrift,
    UnknownUnit,
    UnparseableValue,
)
from .panel import PanelDataset, SimulationTruth, UnitSeries

__all__ = [
    "PANEL_COLUMNS",
    "COVARIATE_COLUMNS",
    "TRUTH_COLUMNS",
    "PeriodAxis",
    "PanelTable",
    "read_panel_csv",
    "write_panel_csv",
    "table_to_panel",
    "read_covariates_csv",
    "write_covariates_csv",
    "join_covariates",
    "read_truth_csv",
    "write_truth_csv",
    "ScenarioManifest",
    "write_manifest",
    "read_manifest",
    "StudyConfig",
    "load_study_config",
    "atomic_write_text",
    "fetch_public_prices",
    "write_forecasts_csv",
    "read_forecasts_csv",
]

PANEL_COLUMNS = ("unit_id", "period", "value")
COVARIATE_COLUMNS = ("unit_id", "period", "name", "value")
TRUTH_COLUMNS = ("unit_id", "period", "counterfactual")

_UMASK = os.umask(0)
os.umask(_UMASK)

_MONTH = re.compile(r"^(\d{4})-(\d{2})$")
_DAY = re.compile(r"^(\d{4})-(\d{2})-(\d{2})$")
_INT = re.compile(r"^-?\d+$")


# ---- periods ----------------------------------------------------------------------

def _parse_period(text: str) -> tuple[str, int]:
    """``(kind, ordinal)`` with consecutive periods having consecutive ordinals."""
    s = text.strip()
    if _INT.match(s):
        return "int", int(s)
    m = _MONTH.match(s)
    if m:
        y, mo = int(m.group(1)), int(m.group(2))
        if not 1 <= mo <= 12:
            raise ValueError(f"month {mo} out of range")
        return "month", y * 12 + (mo - 1)
    m = _DAY.match(s)
    if m:
        return "day", _dt.date(int(m.group(1)), int(m.group(2)), int(m.group(3))).toordinal()
    raise ValueError(f"period {text!r} is not an integer, YYYY-MM or YYYY-MM-DD")


def _format_period(kind: str, ordinal: int) -> str:
    if kind == "int":
        return str(ordinal)
    if kind == "month":
        return f"{ordinal // 12:04d}-{ordinal % 12 + 1:02d}"
    return _dt.date.fromordinal(ordinal).isoformat()


@dataclass(frozen=True)
class PeriodAxis:
    """Bijection between period labels and 0-based indices."""

    kind: str
    start: int  # ordinal of index 0
    length: int

    @property
    def labels(self) -> tuple[str, ...]:
        return tuple(_format_period(self.kind, self.start + k) for k in range(self.length))

    def index(self, label) -> int:
        if isinstance(label, (int, np.integer)) and self.kind != "int":
            k = int(label)
        else:
            kind, ordinal = _parse_period(str(label))
            if kind != self.kind:
                raise BadT0(f"period {label!r} is a {kind}, the axis uses {self.kind}s")
            k = ordinal - self.start
        if not 0 <= k < self.length:
            raise BadT0(f"period {label!r} lies outside the axis")
        return k

    def label(self, index: int) -> str:
        if not 0 <= index < self.length:
            raise IndexError(index)
        return _format_period(self.kind, self.start + index)

    @classmethod
    def from_labels(cls, labels: Sequence[str]) -> "PeriodAxis":
        parsed = [_parse_period(str(s)) for s in labels]
        kind = parsed[0][0]
        return cls(kind, parsed[0][1], len(parsed))


# ---- csv helpers ------------------------------------------------------------------

def _rows(path, required: Sequence[str]):
    """Yield ``(line_number, row_dict)``; line 1 is the header."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        missing = [c for c in required if c not in header]
        if missing:
            raise MissingColumn(f"{path}: missing column(s) {', '.join(missing)}")
        for row in reader:
            yield reader.line_num, row


def _float(text, path, line, column) -> float:
    try:
        v = float(text)
    except (TypeError, ValueError):
        raise UnparseableValue(f"{path}:{line}: cannot parse {column}={text!r}") from None
    if not np.isfinite(v):
        raise UnparseableValue(f"{path}:{line}: {column} must be finite, got {text!r}")
    return v


def _period(text, path, line):
    try:
        return _parse_period(text or "")
    except ValueError as exc:
        raise UnparseableValue(f"{path}:{line}: {exc}") from None


def _fmt(v: float) -> str:
    return repr(float(v))  # shortest round-tripping text


def atomic_write_text(path, text: str) -> None:
    """Write via a temporary file in the same directory, then rename into place."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.chmod(tmp, 0o666 & ~_UMASK)  # mkstemp creates 0600 files
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _csv_text(header: Sequence[str], rows: Iterable[Sequence]) -> str:
    lines = [",".join(header)]
    lines.extend(",".join(str(c) for c in r) for r in rows)
    return "\n".join(lines) + "\n"


# ---- panel ------------------------------------------------------------------------

@dataclass(frozen=True)
class PanelTable:
    """Outcome matrix read from a panel file, units sorted by id."""

    unit_ids: tuple[str, ...]
    values: np.ndarray  # (N, T)
    axis: PeriodAxis

    @property
    def period_labels(self) -> tuple[str, ...]:
        return self.axis.labels


def _assemble(path, records: dict, value_name: str):
    """Check keys form a full, gap-free rectangle; return ``(ids, matrix, axis)``."""
    kinds = {k for (_, (k, _)) in records}
    if len(kinds) > 1:
        raise UnparseableValue(f"{path}: mixed period kinds {sorted(kinds)}")
    kind = kinds.pop()
    ids = sorted({u for (u, _) in records})
    ordinals = sorted({o for (_, (_, o)) in records})
    lo, hi = ordinals[0], ordinals[-1]
    for o_prev, o in zip(ordinals, ordinals[1:]):
        if o != o_prev + 1:
            raise GapInPeriods(
                f"{path}: no unit has period {_format_period(kind, o_prev + 1)}")
    T = hi - lo + 1
    values = np.empty((len(ids), T))
    for i, uid in enumerate(ids):
        for k in range(T):
            key = (uid, (kind, lo + k))
            if key not in records:
                raise GapInPeriods(
                    f"{path}: unit {uid!r} has no {value_name} for period {_format_period(kind, lo + k)}")
            values[i, k] = records[key]
    return tuple(ids), values, PeriodAxis(kind, lo, T)


def read_panel_csv(path) -> PanelTable:
    """Read ``unit_id,period,value`` rows; error messages carry file and line."""
    records: dict = {}
    for line, row in _rows(path, PANEL_COLUMNS):
        uid = (row["unit_id"] or "").strip()
        if not uid:
            raise UnparseableValue(f"{path}:{line}: empty unit_id")
        key = (uid, _period(row["period"], path, line))
        if key in records:
            raise DuplicateKey(f"{path}:{line}: duplicate row for unit {uid!r} period {row['period']!r}")
        records[key] = _float(row["value"], path, line, "value")
    if not records:
        raise UnparseableValue(f"{path}: no data rows")
    ids, values, axis = _assemble(path, records, "value")
    return PanelTable(ids, values, axis)


def write_panel_csv(path, panel: PanelDataset | PanelTable) -> None:
    labels = panel.period_labels or tuple(str(k) for k in range(panel.values.shape[1]))
    rows = (
        (uid, labels[k], _fmt(v))
        for uid, row in zip(panel.unit_ids, panel.values)
        for k, v in enumerate(row)
    )
    atomic_write_text(path, _csv_text(PANEL_COLUMNS, rows))


def table_to_panel(table: PanelTable, t0, treated_units: Iterable[str]) -> PanelDataset:
    """Attach treatment flags and the intervention period (label or index)."""
    treated = set(treated_units)
    unknown = treated - set(table.unit_ids)
    if unknown:
        raise UnknownUnit(f"treated unit(s) not in panel: {', '.join(sorted(unknown))}")
    t0_index = _resolve_t0(table.axis, t0)
    units = tuple(UnitSeries(u, row, u in treated) for u, row in zip(table.unit_ids, table.values))
    return PanelDataset(units, t0_index, table.period_labels)


def _resolve_t0(axis: PeriodAxis, t0) -> int:
    if isinstance(t0, str) and not _INT.match(t0.strip()):
        return axis.index(t0)
    if axis.kind == "int":
        return axis.index(str(int(t0)))
    return int(t0)


# ---- covariates ---------------------------------------------------------------------

def read_covariates_csv(path) -> dict[str, PanelTable]:
    """``unit_id,period,name,value`` rows grouped into one table per covariate name."""
    by_name: dict[str, dict] = {}
    for line, row in _rows(path, COVARIATE_COLUMNS):
        uid = (row["unit_id"] or "").strip()
        name = (row["name"] or "").strip()
        if not uid or not name:
            raise UnparseableValue(f"{path}:{line}: empty unit_id or name")
        key = (uid, _period(row["period"], path, line))
        recs = by_name.setdefault(name, {})
        if key in recs:
            raise DuplicateKey(f"{path}:{line}: duplicate {name!r} row for unit {uid!r}")
        recs[key] = _float(row["value"], path, line, "value")
    out = {}
    for name, recs in sorted(by_name.items()):
        try:
            ids, values, axis = _assemble(path, recs, name)
        except GapInPeriods as exc:
            raise CoverageGap(str(exc)) from None
        out[name] = PanelTable(ids, values, axis)
    return out


def write_covariates_csv(path, panel: PanelDataset) -> None:
    labels = panel.period_labels or tuple(str(k) for k in range(panel.length))
    rows = []
    for u in panel.units:
        for name in sorted(u.covariates):
            rows.extend((u.unit_id, labels[k], name, _fmt(v)) for k, v in enumerate(u.covariates[name]))
    atomic_write_text(path, _csv_text(COVARIATE_COLUMNS, rows))


def join_covariates(panel: PanelDataset, covariates) -> PanelDataset:
    """Attach covariates (a path or the output of :func:`read_covariates_csv`).

    Each unit's covariate is z-scored with its own pre-period mean and
    standard deviation, so nothing from the post-period leaks into the
    scaling. A covariate that is constant over a unit's pre-period becomes
    all zeros for that unit, with a warning.
    """
    tables = read_covariates_csv(covariates) if isinstance(covariates, (str, os.PathLike)) else covariates
    labels = panel.period_labels
    if labels is None:
        raise CoverageGap("panel has no period labels to align covariates with")
    axis = PeriodAxis.from_labels(labels)
    t0 = panel.t0
    mats = {}
    for name, tab in tables.items():
        extra = set(tab.unit_ids) - set(panel.unit_ids)
        if extra:
            raise UnknownUnit(f"covariate {name!r} names unknown unit(s): {', '.join(sorted(extra))}")
        missing = [u for u in panel.unit_ids if u not in tab.unit_ids]
        if missing:
            raise CoverageGap(f"covariate {name!r} has no rows for unit(s): {', '.join(missing)}")
        if tab.axis.kind != axis.kind:
            raise CoverageGap(f"covariate {name!r} uses {tab.axis.kind} periods, panel uses {axis.kind}")
        offset = axis.start - tab.axis.start
        if offset < 0 or offset + panel.length > tab.axis.length:
            raise CoverageGap(f"covariate {name!r} does not cover every panel period")
        M = np.empty((len(panel.units), panel.length))
        for i, uid in enumerate(panel.unit_ids):
            row = tab.values[tab.unit_ids.index(uid), offset:offset + panel.length]
            mu, sd = row[:t0].mean(), row[:t0].std()
            if sd == 0:
                warnings.warn(f"covariate {name!r} is constant before t0 for unit {uid!r}; using zeros",
                              stacklevel=2)
                M[i] = 0.0
            else:
                M[i] = (row - mu) / sd
        mats[name] = M
    return panel.with_covariates(mats)


# ---- truth --------------------------------------------------------------------------

def write_truth_csv(path, panel: PanelDataset, truth: SimulationTruth) -> None:
    labels = panel.period_labels or tuple(str(k) for k in range(panel.length))
    t0 = panel.t0
    rows = (
        (uid, labels[t0 + k], _fmt(v))
        for uid in panel.treated_ids
        for k, v in enumerate(truth.counterfactuals[uid])
    )
    atomic_write_text(path, _csv_text(TRUTH_COLUMNS, rows))


def read_truth_csv(path, panel: PanelDataset) -> SimulationTruth:
    """Counterfactual paths of the treated units; ``true_att`` is recomputed from the panel."""
    labels = panel.period_labels or tuple(str(k) for k in range(panel.length))
    axis = PeriodAxis.from_labels(labels)
    t0, h = panel.t0, panel.horizon
    paths: dict[str, np.ndarray] = {}
    seen = set()
    for line, row in _rows(path, TRUTH_COLUMNS):
        uid = (row["unit_id"] or "").strip()
        if uid not in panel.unit_ids:
            raise UnknownUnit(f"{path}:{line}: unit {uid!r} is not in the panel")
        try:
            k = axis.index(row["period"]) - t0
        except (BadT0, ValueError):
            raise UnparseableValue(f"{path}:{line}: bad period {row['period']!r}") from None
        if not 0 <= k < h:
            raise UnparseableValue(f"{path}:{line}: period {row['period']!r} is not post-intervention")
        if (uid, k) in seen:
            raise DuplicateKey(f"{path}:{line}: duplicate row for unit {uid!r}")
        seen.add((uid, k))
        paths.setdefault(uid, np.full(h, np.nan))[k] = _float(row["counterfactual"], path, line,
                                                              "counterfactual")
    for uid in panel.treated_ids:
        if uid not in paths or np.isnan(paths[uid]).any():
            raise CoverageGap(f"{path}: incomplete counterfactual for treated unit {uid!r}")
    diffs = [panel.unit(u).values[t0:] - paths[u] for u in panel.treated_ids]
    return SimulationTruth(paths, float(np.mean(diffs)))


# ---- manifests and study configs -----------------------------------------------------

@dataclass(frozen=True)
class ScenarioManifest:
    label: str
    seed: int
    sigma: float
    t0: int
    treated_units: tuple[str, ...]
    true_att: float
    extra: Mapping[str, Any] = field(default_factory=dict)

    def to_dict(self) -> dict:
        d = {
            "label": self.label,
            "seed": self.seed,
            "sigma": self.sigma,
            "t0": self.t0,
            "treated_units": list(self.treated_units),
            "true_att": self.true_att,
        }
        d.update(self.extra)
        return d


def write_manifest(path, manifest: ScenarioManifest) -> None:
    atomic_write_text(path, json.dumps(manifest.to_dict(), indent=2, sort_keys=True) + "\n")


def read_manifest(path) -> ScenarioManifest:
    with open(path, encoding="utf-8") as fh:
        d = json.load(fh)
    core = ("label", "seed", "sigma", "t0", "treated_units", "true_att")
    missing = [k for k in core if k not in d]
    if missing:
        raise MissingColumn(f"{path}: manifest lacks {', '.join(missing)}")
    extra = {k: v for k, v in d.items() if k not in core}
    return ScenarioManifest(d["label"], int(d["seed"]), float(d["sigma"]), int(d["t0"]),
                            tuple(d["treated_units"]), float(d["true_att"]), extra)


@dataclass(frozen=True)
class StudyConfig:
    """Everything needed to turn files on disk into a panel and a set of fits."""

    panel: str
    t0: Any
    treated_units: tuple[str, ...]
    season: int = 12
    covariates: tuple[str, ...] = ()
    models: Mapping[str, Mapping[str, Any]] = field(default_factory=dict)
    seed: int = 0
    output_dir: str = "out"
    truth: str | None = None

    def load_panel(self) -> PanelDataset:
        panel = table_to_panel(read_panel_csv(self.panel), self.t0, self.treated_units)
        for cov in self.covariates:
            panel = join_covariates(panel, cov)
        return panel


def load_study_config(path) -> StudyConfig:
    """Read a study JSON; relative file paths resolve against the config's directory."""
    path = Path(path)
    with open(path, encoding="utf-8") as fh:
        d = json.load(fh)
    for key in ("panel", "t0", "treated_units"):
        if key not in d:
            raise MissingColumn(f"{path}: study config lacks {key!r}")
    base = path.parent

    def rel(p):
        return str(p if Path(p).is_absolute() else base / p)

    known = {"panel", "t0", "treated_units", "season", "covariates", "models", "seed",
             "output_dir", "truth"}
    unknown = set(d) - known
    if unknown:
        raise MissingColumn(f"{path}: unknown study config keys {sorted(unknown)}")
    return StudyConfig(
        panel=rel(d["panel"]),
        t0=d["t0"],
        treated_units=tuple(d["treated_units"]),
        season=int(d.get("season", 12)),
        covariates=tuple(rel(c) for c in d.get("covariates", ())),
        models=dict(d.get("models", {})),
        seed=int(d.get("seed", 0)),
        output_dir=rel(d.get("output_dir", "out")),
        truth=rel(d["truth"]) if d.get("truth") else None,
    )


# ---- remote fetch --------------------------------------------------------------------

def _byte_offset(text: str, char_pos: int) -> int:
    return len(text[:char_pos].encode("utf-8"))


def fetch_public_prices(endpoint_url: str, api_key_env_name: str, series_spec: Mapping[str, Any],
                        out_path, timeout: float = 30.0) -> int:
    """Download price records as JSON and write them as a panel CSV; returns the row count.

    ``series_spec`` names the JSON fields (``unit_field``, ``period_field``,
    ``value_field``), an optional ``records_path`` (list of keys leading to
    the record list, default ``["response", "data"]``) and extra query
    ``params``. The key from ``api_key_env_name`` is sent as ``api_key``.
    """
    key = os.environ.get(api_key_env_name)
    if not key:
        raise AuthError(f"environment variable {api_key_env_name} is not set")
    params = dict(series_spec.get("params", {}))
    params["api_key"] = key
    sep = "&" if urllib.parse.urlparse(endpoint_url).query else "?"
    url = endpoint_url + sep + urllib.parse.urlencode(params, doseq=True)
    try:
        with urllib.request.urlopen(url, timeout=timeout) as resp:
            raw = resp.read()
    except urllib.error.HTTPError as exc:
        if exc.code in (401, 403):
            raise AuthError(f"server rejected the key in {api_key_env_name} (HTTP {exc.code})",
                            exc.code) from None
        raise HttpError(f"HTTP {exc.code} from {endpoint_url}", exc.code) from None
    except urllib.error.URLError as exc:
        raise HttpError(f"cannot reach {endpoint_url}: {exc.reason}") from None

    text = raw.decode("utf-8", errors="replace")
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        off = _byte_offset(text, exc.pos)
        raise SchemaDrift(f"malformed JSON at byte {off}: {exc.msg}", off) from None

    node = doc
    for k in series_spec.get("records_path", ("response", "data")):
        if not isinstance(node, dict) or k not in node:
            raise SchemaDrift(f"response has no {k!r} along the records path")
        node = node[k]
    if not isinstance(node, list):
        raise SchemaDrift("records path does not lead to a list")
    uf = series_spec.get("unit_field", "stateid")
    pf = series_spec.get("period_field", "period")
    vf = series_spec.get("value_field", "price")
    rows = []
    for n, rec in enumerate(node):
        try:
            uid, period, value = str(rec[uf]), str(rec[pf]), float(rec[vf])
        except (KeyError, TypeError, ValueError):
            raise SchemaDrift(f"record {n} lacks usable {uf!r}/{pf!r}/{vf!r} fields") from None
        rows.append((uid, period, _fmt(value)))
    rows.sort(key=lambda r: (r[0], _parse_period(r[1])[1]))
    atomic_write_text(out_path, _csv_text(PANEL_COLUMNS, rows))
    return len(rows)


# ---- forecasts ------------------------------------------------------------------------

def _quantile_column(tau: float) -> str:
    return f"q{round(tau * 100):02d}"


def write_forecasts_csv(path, panel: PanelDataset, points: Mapping[str, np.ndarray],
                        taus: Sequence[float] = (), quantiles: Mapping[str, np.ndarray] | None = None) -> None:
    """``unit_id,period,point[,q05,...]`` rows for every unit's post-period, in panel order."""
    labels = panel.period_labels or tuple(str(k) for k in range(panel.length))
    t0 = panel.t0
    header = list(PANEL_COLUMNS[:2]) + ["point"] + [_quantile_column(t) for t in taus]
    rows = []
    for uid in panel.unit_ids:
        if uid not in points:
            continue
        for k, v in enumerate(points[uid]):
            row = [uid, labels[t0 + k], _fmt(v)]
            if taus:
                row.extend(_fmt(q) for q in quantiles[uid][k])
            rows.append(row)
    atomic_write_text(path, _csv_text(header, rows))


def read_forecasts_csv(path, panel: PanelDataset):
    """``(points, quantiles, taus)``; quantiles is empty when the file has no q columns."""
    labels = panel.period_labels or tuple(str(k) for k in range(panel.length))
    lookup = {lab: k for k, lab in enumerate(labels)}
    t0, h = panel.t0, panel.horizon
    with open(path, newline="", encoding="utf-8") as fh:
        header = next(csv.reader(fh), [])
    qcols = [c for c in header if re.fullmatch(r"q\d{2}", c)]
    taus = tuple(int(c[1:]) / 100 for c in qcols)
    points: dict[str, np.ndarray] = {}
    quantiles: dict[str, np.ndarray] = {}
    for line, row in _rows(path, ("unit_id", "period", "point")):
        uid = (row["unit_id"] or "").strip()
        if uid not in panel.unit_ids:
            raise UnknownUnit(f"{path}:{line}: unit {uid!r} is not in the panel")
        period = (row["period"] or "").strip()
        if period not in lookup or not 0 <= lookup[period] - t0 < h:
            raise UnparseableValue(f"{path}:{line}: period {period!r} is not post-intervention")
        k = lookup[period] - t0
        points.setdefault(uid, np.full(h, np.nan))[k] = _float(row["point"], path, line, "point")
        if qcols:
            quantiles.setdefault(uid, np.full((h, len(qcols)), np.nan))[k] = [
                _float(row[c], path, line, c) for c in qcols]
    for uid, p in points.items():
        if np.isnan(p).any():
            raise CoverageGap(f"{path}: incomplete forecast for unit {uid!r}")
    return points, quantiles, taus
