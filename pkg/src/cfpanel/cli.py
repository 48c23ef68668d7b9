"""``cfpanel`` command line: simulate, fit, evaluate, study and fetch.

Every command writes plain files. ``simulate`` records its run details
inside the scenario manifest; the other commands write a
``run_manifest*.json`` next to their outputs with input/output hashes and
wall-clock timing.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Sequence

from . import __version__
from .errors import CfPanelError
from .evaluate import build_report, report_svg, report_to_csv, report_to_json
from .io import (
    ScenarioManifest,
    atomic_write_text,
    fetch_public_prices,
    join_covariates,
    load_study_config,
    read_forecasts_csv,
    read_manifest,
    read_panel_csv,
    read_truth_csv,
    table_to_panel,
    write_forecasts_csv,
    write_manifest,
    write_panel_csv,
    write_truth_csv,
)
from .pipeline import MODELS, fit_model
from .synthgen import InterventionSpec, SynthConfig, generate_scenario_grid, simulate

__all__ = ["main", "build_parser", "RunManifest", "sha256_file"]


# ---- run manifest -----------------------------------------------------------------

def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


@dataclass
class RunManifest:
    command: list[str]
    config: dict[str, Any]
    seed: int | None
    inputs: dict[str, str] = field(default_factory=dict)
    outputs: dict[str, str] = field(default_factory=dict)
    seconds: float | None = None
    version: str = __version__

    def hash_inputs(self, paths) -> None:
        for p in paths:
            self.inputs[str(p)] = sha256_file(p)

    def hash_outputs(self, paths, names_only: bool = False) -> None:
        for p in paths:
            self.outputs[Path(p).name if names_only else str(p)] = sha256_file(p)

    def to_dict(self, timing: bool = True) -> dict:
        d = asdict(self)
        if not timing:
            d.pop("seconds")
        return d

    def write(self, path) -> None:
        atomic_write_text(path, json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")


# ---- shared loading ---------------------------------------------------------------

def _load_json_arg(value):
    """A JSON literal or a path to a JSON file."""
    if value is None:
        return {}
    p = Path(value)
    if p.exists():
        with open(p, encoding="utf-8") as fh:
            return json.load(fh)
    return json.loads(value)


def _load_panel(args):
    """Panel from ``--config`` or ``--panel`` plus ``--manifest`` / ``--t0 --treated``."""
    inputs = []
    season = args.season
    study = None
    if args.config:
        study = load_study_config(args.config)
        panel = study.load_panel()
        inputs += [args.config, study.panel, *study.covariates]
        if season is None:
            season = study.season
    else:
        if not args.panel:
            raise SystemExit("error: give --config or --panel")
        table = read_panel_csv(args.panel)
        inputs.append(args.panel)
        if args.manifest:
            man = read_manifest(args.manifest)
            t0, treated = man.t0, man.treated_units
            inputs.append(args.manifest)
        elif args.t0 is not None and args.treated:
            t0, treated = args.t0, args.treated.split(",")
        else:
            raise SystemExit("error: --panel needs --manifest or both --t0 and --treated")
        panel = table_to_panel(table, t0, treated)
        for cov in args.covariates or ():
            panel = join_covariates(panel, cov)
            inputs.append(cov)
    return panel, (season if season is not None else 7), study, inputs


def _add_panel_flags(p):
    p.add_argument("--config", help="study config JSON (panel, t0, treated units, covariates, models)")
    p.add_argument("--panel", help="panel CSV (unit_id,period,value)")
    p.add_argument("--manifest", help="scenario manifest JSON giving t0 and treated units")
    p.add_argument("--t0", help="first post-intervention period (label or index)")
    p.add_argument("--treated", help="comma-separated treated unit ids")
    p.add_argument("--covariates", nargs="*", help="covariate CSV(s) (unit_id,period,name,value)")
    p.add_argument("--season", type=int, default=None, help="seasonal period S (default: config, else 7)")


# ---- commands ---------------------------------------------------------------------

def _write_scenario(directory: Path, sc, argv) -> list[Path]:
    directory.mkdir(parents=True, exist_ok=True)
    panel_p, truth_p, man_p = directory / "panel.csv", directory / "truth.csv", directory / "manifest.json"
    write_panel_csv(panel_p, sc.panel)
    write_truth_csv(truth_p, sc.panel, sc.truth)
    run = RunManifest(list(argv), {"synth": asdict(sc.config), "intervention": asdict(sc.spec)},
                      sc.config.seed)
    run.hash_outputs([panel_p, truth_p], names_only=True)
    manifest = ScenarioManifest(
        sc.label, sc.config.seed, float(sc.spec.sigma), sc.panel.t0,
        tuple(sc.panel.treated_ids), sc.truth.true_att,
        # no wall-clock time here, so reruns give identical bytes
        {"sigma_ddof": 1, "run": run.to_dict(timing=False)},
    )
    write_manifest(man_p, manifest)
    return [panel_p, truth_p, man_p]


def cmd_simulate(args, argv) -> int:
    out = Path(args.out)
    spec = InterventionSpec.null() if args.null else InterventionSpec()
    if args.grid:
        for sc in generate_scenario_grid([args.seed], spec):
            _write_scenario(out / sc.label, sc, argv)
    else:
        cfg = SynthConfig(n_units=args.units, length=args.length, trend=args.trend, seed=args.seed)
        _write_scenario(out, simulate(cfg, spec), argv)
    return 0


def _fit_and_write(panel, model: str, config, season, out: Path) -> list[Path]:
    fit = fit_model(panel, model, config, season=season)
    out.mkdir(parents=True, exist_ok=True)
    fc_path = out / f"forecasts_{model}.csv"
    first = next(iter(fit.forecasts.values()))
    write_forecasts_csv(fc_path, panel, fit.points(), first.taus,
                        {u: f.quantiles for u, f in fit.forecasts.items()} if first.taus else None)
    written = [fc_path]
    for key, doc in fit.payloads.items():
        name = f"model_{model}.json" if key == "model" else f"model_{model}_{key}.json"
        atomic_write_text(out / name, json.dumps(doc, indent=2, sort_keys=True) + "\n")
        written.append(out / name)
    return written


def cmd_fit(args, argv) -> int:
    start = time.perf_counter()
    panel, season, study, inputs = _load_panel(args)
    config = _load_json_arg(args.model_config)
    if not config and study is not None:
        config = dict(study.models.get(args.model, {}))
    out = Path(args.out)
    written = _fit_and_write(panel, args.model, config, season, out)
    run = RunManifest(list(argv), {"model": args.model, "model_config": config, "season": season},
                      config.get("optimizer", {}).get("seed") if isinstance(config.get("optimizer"), dict) else None)
    run.hash_inputs(inputs)
    run.hash_outputs(written)
    run.seconds = round(time.perf_counter() - start, 3)
    run.write(out / f"run_manifest_fit_{args.model}.json")
    return 0


def _model_name(path: Path) -> str:
    stem = path.stem
    return stem[len("forecasts_"):] if stem.startswith("forecasts_") else stem


def _evaluate(panel, forecast_paths, truth_path, season, out: Path):
    model_forecasts = {}
    for fp in forecast_paths:
        points, _, _ = read_forecasts_csv(fp, panel)
        model_forecasts[_model_name(Path(fp))] = points
    truth = read_truth_csv(truth_path, panel) if truth_path else None
    report = build_report(panel, model_forecasts, truth, S=season)
    out.mkdir(parents=True, exist_ok=True)
    paths = [out / "report.json", out / "report.csv", out / "report.svg"]
    atomic_write_text(paths[0], report_to_json(report))
    atomic_write_text(paths[1], report_to_csv(report))
    atomic_write_text(paths[2], report_svg(panel, model_forecasts))
    return report, paths


def _placebo_exit(report, assert_placebo: bool) -> int:
    failed = [m.model for m in report.models if not m.placebo.passed]
    for m in report.models:
        print(f"{m.model}: att={m.att:.6g} relative={m.relative_att:.4%} smape={m.smape:.4f} "
              f"mase={m.mase:.4f} p={m.placebo.p_value:.4g} ({m.placebo.method})")
    if assert_placebo and failed:
        print(f"placebo test not passed (p >= 0.05): {', '.join(failed)}", file=sys.stderr)
        return 1
    return 0


def cmd_evaluate(args, argv) -> int:
    start = time.perf_counter()
    panel, season, study, inputs = _load_panel(args)
    truth = args.truth or (study.truth if study else None)
    out = Path(args.out)
    report, written = _evaluate(panel, args.forecasts, truth, season, out)
    run = RunManifest(list(argv), {"season": season, "models": [m.model for m in report.models]}, None)
    run.hash_inputs(inputs + list(args.forecasts) + ([truth] if truth else []))
    run.hash_outputs(written)
    run.seconds = round(time.perf_counter() - start, 3)
    run.write(out / "run_manifest_evaluate.json")
    return _placebo_exit(report, args.assert_placebo)


def cmd_study(args, argv) -> int:
    """Fit every configured model and evaluate them together."""
    start = time.perf_counter()
    study = load_study_config(args.config)
    panel = study.load_panel()
    season = args.season or study.season
    out = Path(args.out or study.output_dir)
    models = args.models.split(",") if args.models else list(study.models) or list(MODELS)
    written, fc_paths = [], []
    for m in models:
        files = _fit_and_write(panel, m, dict(study.models.get(m, {})), season, out)
        written += files
        fc_paths.append(files[0])
    report, rep_paths = _evaluate(panel, fc_paths, study.truth, season, out)
    run = RunManifest(list(argv), {"models": {m: study.models.get(m, {}) for m in models},
                                   "season": season}, study.seed)
    run.hash_inputs([args.config, study.panel, *study.covariates])
    run.hash_outputs(written + rep_paths)
    run.seconds = round(time.perf_counter() - start, 3)
    run.write(out / "run_manifest_study.json")
    return _placebo_exit(report, args.assert_placebo)


def cmd_fetch(args, argv) -> int:
    spec = _load_json_arg(args.spec)
    n = fetch_public_prices(args.endpoint, args.key_env, spec, args.out)
    print(f"wrote {n} rows to {args.out}")
    return 0


# ---- parser -----------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cfpanel",
        description="Counterfactual forecasting for panel interventions.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="generate synthetic panels with a known effect")
    p.add_argument("--units", type=int, default=50, help="number of units (default 50)")
    p.add_argument("--length", type=int, default=90, help="series length (default 90)")
    p.add_argument("--trend", action="store_true", help="apply the multiplicative trend")
    p.add_argument("--seed", type=int, default=0, help="random seed (default 0)")
    p.add_argument("--grid", action="store_true", help="write all 8 grid scenarios into subdirectories")
    p.add_argument("--null", action="store_true", help="same split and timing with no effect (A/A)")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("fit", help="fit one model and forecast every unit's post-period")
    p.add_argument("--model", required=True, choices=MODELS)
    _add_panel_flags(p)
    p.add_argument("--model-config", help="model config as JSON text or a JSON file")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("evaluate", help="effects, control-unit errors and the placebo test")
    p.add_argument("--forecasts", nargs="+", required=True, help="forecast CSVs (model name from file name)")
    _add_panel_flags(p)
    p.add_argument("--truth", help="true counterfactual CSV (synthetic data)")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--assert-placebo", action="store_true",
                   help="exit 1 when any model's placebo p-value is >= 0.05")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("study", help="fit all configured models and evaluate them")
    p.add_argument("--config", required=True, help="study config JSON")
    p.add_argument("--models", help="comma-separated subset of models")
    p.add_argument("--season", type=int, default=None)
    p.add_argument("--out", help="output directory (default: the config's output_dir)")
    p.add_argument("--assert-placebo", action="store_true")
    p.set_defaults(func=cmd_study)

    p = sub.add_parser("fetch", help="download public price data into a panel CSV")
    p.add_argument("--endpoint", required=True, help="API endpoint URL")
    p.add_argument("--key-env", required=True, help="environment variable holding the API key")
    p.add_argument("--spec", default="{}", help="series spec as JSON text or a JSON file")
    p.add_argument("--out", required=True, help="output CSV path")
    p.set_defaults(func=cmd_fetch)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "units", 2) < 2:
        parser.error("--units must be >= 2")
    if getattr(args, "length", 90) <= 24:
        parser.error("--length must exceed 24")
    try:
        return args.func(args, ["cfpanel", *argv])
    except CfPanelError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
