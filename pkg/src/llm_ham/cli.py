"""Command-line entry point.

Exit status: 0 success, 2 usage, 3 data, 4 transport. Failures print one line
``error: code=<CODE> message=<text>`` to stderr.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

from . import __version__
from .backends import BackendError, BackendKind, make_backend
from .config import ConfigError, Experiment, RunConfig, build_config, read_config_file
from .experiments import (
    GRID_QUANTITIES,
    DataError,
    GridSpec,
    MatrixRun,
    RobustnessMatrix,
    TimeSeriesSpec,
    VariationMode,
    default_run,
    expand_matrix,
    load_price_csv,
    standard_sweeps,
    read_grid_table,
    read_timeseries_table,
    run_grid,
    run_timeseries,
    write_grid_outputs,
    write_timeseries_outputs,
)
from .ham_core import calibrate_discount_rate
from .replication import AGGREGATE_COLUMNS, PlanError, PlanErrorCode, ParamMode, reaggregate_dir
from .report import HEATMAP_DEFAULTS, HeatmapRender, render_heatmap, render_series

logger = logging.getLogger("llm_ham")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_TRANSPORT = 0, 2, 3, 4


class CliError(Exception):
    def __init__(self, status: int, code: str, message: str):
        super().__init__(message)
        self.status = status
        self.code = code


def _backend_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="INI-style configuration file")
    p.add_argument("--backend", choices=["remote", "oracle", "replay"])
    p.add_argument("--model")
    p.add_argument("--temperature", type=float)
    p.add_argument("--reps", type=int, help="replications per snapshot")
    p.add_argument("--variant", help="composition prompt variant, or UNIFIED")
    p.add_argument("--out", help="output directory")
    p.add_argument("--replay-path", help="JSONL file or directory of transcripts for --backend replay")
    p.add_argument("--max-in-flight", type=int)
    p.add_argument("--max-retries", type=int)
    p.add_argument("--param-mode", choices=[m.value for m in ParamMode])
    p.add_argument("--allow-network", action="store_true", help="required for --backend remote")
    p.add_argument("--seedless", action="store_true", help="acknowledge that a remote run is not reproducible")
    p.add_argument("--no-render", action="store_true", help="skip SVG output")


def _grid_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--pt", type=float, help="current price of the grid")
    p.add_argument("--variation-mode", choices=[m.value for m in VariationMode])


def _ts_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--input", help="monthly CSV with header date,price,dividend")
    p.add_argument("--start", help="first month, YYYY-MM")
    p.add_argument("--end", help="last month, YYYY-MM")
    p.add_argument("--growth", type=float, help="Gordon growth rate per period")
    p.add_argument("--discount", type=float, help="Gordon discount rate per period")
    p.add_argument("--calibrate", action="store_true", help="set the discount rate so mean fundamental equals mean price")
    p.add_argument("--ma-window", type=int)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="llm-ham", description="Elicit HAM strategy weights and expectations from generative agents.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run-grid", help="artificial-market grid experiment")
    _backend_flags(p)
    _grid_flags(p)

    p = sub.add_parser("run-timeseries", help="historical time-series experiment")
    _backend_flags(p)
    _ts_flags(p)

    p = sub.add_parser("run-matrix", help="robustness sweep")
    _backend_flags(p)
    _grid_flags(p)
    _ts_flags(p)
    p.add_argument("--kind", choices=["grid", "timeseries"])
    p.add_argument("--sweep", choices=sorted(standard_sweeps()) + ["all"], help="predefined sweep instead of [matrix] values")

    p = sub.add_parser("render-heatmap", help="SVG heatmap from a gap,trend,value table")
    p.add_argument("table")
    p.add_argument("--quantity", choices=list(GRID_QUANTITIES))
    p.add_argument("--midpoint", type=float)
    p.add_argument("--out", required=True)

    p = sub.add_parser("render-series", help="SVG chart from a time-series table")
    p.add_argument("table")
    p.add_argument("--out", required=True)

    p = sub.add_parser("verify-cache", help="re-aggregate transcripts and diff against aggregates.csv")
    p.add_argument("run_dir")
    p.add_argument("--param-mode", choices=[m.value for m in ParamMode])
    return parser


def _sections(args: argparse.Namespace) -> dict[str, dict[str, str]]:
    sections = read_config_file(args.config) if getattr(args, "config", None) else {}
    for name in ("backend", "run", "grid", "timeseries", "matrix"):
        sections.setdefault(name, {})

    def put(section: str, key: str, value) -> None:
        if value is not None:
            sections[section][key] = str(value)

    put("backend", "kind", args.backend)
    put("backend", "model", args.model)
    put("backend", "temperature", args.temperature)
    put("backend", "replay_path", args.replay_path)
    put("backend", "max_in_flight", args.max_in_flight)
    put("backend", "max_retries", args.max_retries)
    put("run", "reps", args.reps)
    put("run", "variant", args.variant)
    put("run", "out", args.out)
    put("run", "param_mode", args.param_mode)
    if args.no_render:
        sections["run"]["render"] = "false"
    put("grid", "p_t", getattr(args, "pt", None))
    put("run", "variation_mode", getattr(args, "variation_mode", None))
    for key in ("input", "start", "end", "growth", "discount", "ma_window"):
        put("timeseries", key, getattr(args, key, None))
    if getattr(args, "calibrate", False):
        sections["timeseries"]["calibrate"] = "true"
    put("matrix", "kind", getattr(args, "kind", None))
    return sections


def _load(args: argparse.Namespace, experiment: Experiment) -> RunConfig:
    cfg = build_config(experiment, _sections(args))
    if cfg.backend.backend_kind is BackendKind.REMOTE and not args.allow_network:
        raise CliError(EXIT_USAGE, "NETWORK_NOT_ALLOWED", "remote backend requires --allow-network")
    return cfg


def _meta(cfg: RunConfig, args: argparse.Namespace) -> dict:
    return {
        "backend": cfg.backend.backend_kind.value,
        "param_mode": cfg.param_mode.value,
        "variation_mode": cfg.variation_mode,
        "seedless": bool(args.seedless or cfg.backend.backend_kind is BackendKind.REMOTE),
    }


def _calibrated(cfg: RunConfig, spec: TimeSeriesSpec) -> TimeSeriesSpec:
    if not cfg.calibrate:
        return spec
    import dataclasses

    rate = calibrate_discount_rate(load_price_csv(spec.input_path), spec.gordon_growth)
    logger.info("calibrated discount rate %.6f", rate)
    return dataclasses.replace(spec, gordon_discount=rate)


def _do_grid(cfg: RunConfig, run: MatrixRun, out: Path, backend, meta: dict) -> list[str]:
    assert isinstance(run.spec, GridSpec)
    result = run_grid(run.spec, run, cfg.backend, out, backend, cfg.param_mode, VariationMode(cfg.variation_mode))
    for path in write_grid_outputs(result, out, meta):
        print(f"wrote {path}")
    if cfg.render:
        for q in GRID_QUANTITIES:
            svg = render_heatmap(result.tables[q], HEATMAP_DEFAULTS[q], out / f"{q}.svg")
            print(f"wrote {svg}")
    for w in result.warnings:
        print(f"warning: {w}", file=sys.stderr)
    return result.failures


def _do_timeseries(cfg: RunConfig, run: MatrixRun, out: Path, backend, meta: dict) -> list[str]:
    assert isinstance(run.spec, TimeSeriesSpec)
    result = run_timeseries(run.spec, run, cfg.backend, out, backend, cfg.param_mode)
    meta = {**meta, "gordon_discount": run.spec.gordon_discount, "gordon_growth": run.spec.gordon_growth}
    path = write_timeseries_outputs(result, out, meta)
    print(f"wrote {path}")
    if cfg.render:
        print(f"wrote {render_series(result.rows, out / 'timeseries.svg')}")
    for w in result.warnings:
        print(f"warning: {w}", file=sys.stderr)
    return result.failures


def _finish(failures: list[str]) -> int:
    if failures:
        raise CliError(EXIT_TRANSPORT, PlanErrorCode.ALL_REPLICATIONS_FAILED.value, f"{len(failures)} plan(s) failed: {failures[0]}")
    return EXIT_OK


def cmd_run_grid(args: argparse.Namespace) -> int:
    cfg = _load(args, Experiment.GRID)
    run = default_run(cfg.grid, cfg.backend, cfg.reps, cfg.variant)
    backend = make_backend(run.backend_config(cfg.backend))
    return _finish(_do_grid(cfg, run, cfg.out_dir, backend, _meta(cfg, args)))


def cmd_run_timeseries(args: argparse.Namespace) -> int:
    cfg = _load(args, Experiment.TIMESERIES)
    if cfg.timeseries is None:
        raise CliError(EXIT_USAGE, "USAGE", "run-timeseries needs --input or [timeseries] input")
    spec = _calibrated(cfg, cfg.timeseries)
    run = default_run(spec, cfg.backend, cfg.reps, cfg.variant)
    backend = make_backend(run.backend_config(cfg.backend))
    return _finish(_do_timeseries(cfg, run, cfg.out_dir, backend, _meta(cfg, args)))


def _matrices(cfg: RunConfig, sweep: Optional[str]) -> list[RobustnessMatrix]:
    if sweep is None:
        return [cfg.matrix]
    sweeps = standard_sweeps()
    return list(sweeps.values()) if sweep == "all" else [sweeps[sweep]]


def cmd_run_matrix(args: argparse.Namespace) -> int:
    cfg = _load(args, Experiment.MATRIX)
    if cfg.matrix_kind == "timeseries":
        if cfg.timeseries is None:
            raise CliError(EXIT_USAGE, "USAGE", "a time-series matrix needs --input")
        base: GridSpec | TimeSeriesSpec = _calibrated(cfg, cfg.timeseries)
    else:
        base = cfg.grid
    runs: dict[str, MatrixRun] = {}
    for matrix in _matrices(cfg, args.sweep):
        for run in expand_matrix(matrix, base):
            runs.setdefault(run.run_id, run)
    meta = _meta(cfg, args)
    failures: list[str] = []
    backends: dict[tuple, object] = {}
    index_rows = []
    for run in runs.values():
        bcfg = run.backend_config(cfg.backend)
        key = (bcfg.model_name, bcfg.temperature)
        if key not in backends:
            backends[key] = make_backend(bcfg)
        out = cfg.out_dir / run.run_id
        if isinstance(run.spec, GridSpec):
            failures += _do_grid(cfg, run, out, backends[key], meta)
        else:
            failures += _do_timeseries(cfg, run, out, backends[key], meta)
        index_rows.append(run)
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    with open(cfg.out_dir / "runs.csv", "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["run_id", "temperature", "model", "p_t", "variant", "n_replications"])
        for run in index_rows:
            w.writerow([run.run_id, run.temperature, run.model, "" if run.p_t is None else run.p_t, run.variant.value, run.n_replications])
    return _finish(failures)


def cmd_render_heatmap(args: argparse.Namespace) -> int:
    table = read_grid_table(args.table)
    quantity = args.quantity or Path(args.table).stem
    render = HEATMAP_DEFAULTS.get(quantity, HeatmapRender())
    if args.midpoint is not None:
        import dataclasses

        render = dataclasses.replace(render, midpoint=args.midpoint)
    print(f"wrote {render_heatmap(table, render, args.out)}")
    return EXIT_OK


def cmd_render_series(args: argparse.Namespace) -> int:
    rows = read_timeseries_table(args.table)
    print(f"wrote {render_series(rows, args.out)}")
    return EXIT_OK


def cmd_verify_cache(args: argparse.Namespace) -> int:
    run_dir = Path(args.run_dir)
    mode = args.param_mode
    if mode is None:
        for meta_path in sorted(run_dir.glob("*.meta.json")):
            mode = json.loads(meta_path.read_text(encoding="utf-8")).get("param_mode")
            if mode:
                break
    aggs_path = run_dir / "aggregates.csv"
    if not aggs_path.exists():
        raise DataError("BAD_INPUT", f"{aggs_path} not found")
    with open(aggs_path, encoding="utf-8", newline="") as fh:
        stored = list(csv.DictReader(fh))
    fresh, warnings = reaggregate_dir(run_dir / "transcripts", ParamMode(mode or ParamMode.PER_REPLICATION.value))
    for w in warnings:
        print(f"warning: {w}", file=sys.stderr)

    def key(row: dict) -> tuple:
        return tuple(row[c] for c in AGGREGATE_COLUMNS[:6])

    stored_by = {key(r): r for r in stored}
    fresh_by = {key(r): r for r in fresh}
    problems = []
    for k in sorted(set(stored_by) | set(fresh_by)):
        a, b = stored_by.get(k), fresh_by.get(k)
        if a is None or b is None:
            problems.append(f"{'/'.join(k)}: only in {'transcripts' if a is None else 'aggregates'}")
            continue
        for c in AGGREGATE_COLUMNS:
            if a[c] != b[c]:
                problems.append(f"{'/'.join(k)}: {c} stored={a[c]!r} recomputed={b[c]!r}")
    for p in problems:
        print(p)
    if problems:
        raise CliError(EXIT_DATA, "CACHE_MISMATCH", f"{len(problems)} difference(s) between transcripts and aggregates")
    print(f"ok: {len(stored)} aggregate rows reproduced")
    return EXIT_OK


COMMANDS = {
    "run-grid": cmd_run_grid,
    "run-timeseries": cmd_run_timeseries,
    "run-matrix": cmd_run_matrix,
    "render-heatmap": cmd_render_heatmap,
    "render-series": cmd_render_series,
    "verify-cache": cmd_verify_cache,
}


def _fail(status: int, code: str, message: str) -> int:
    one_line = " ".join(str(message).split())
    print(f"error: code={code} message={one_line}", file=sys.stderr)
    return status


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except CliError as exc:
        return _fail(exc.status, exc.code, str(exc))
    except ConfigError as exc:
        return _fail(EXIT_USAGE, "CONFIG", str(exc))
    except DataError as exc:
        return _fail(EXIT_DATA, exc.code, exc.message)
    except BackendError as exc:
        return _fail(EXIT_TRANSPORT, exc.code.value, exc.message)
    except PlanError as exc:
        status = EXIT_DATA if exc.code is PlanErrorCode.SINK_FAILED else EXIT_TRANSPORT
        return _fail(status, exc.code.value, exc.message)
    except OSError as exc:
        return _fail(EXIT_DATA, "IO", str(exc))
    except ValueError as exc:
        return _fail(EXIT_USAGE, "INVALID", str(exc))


def run() -> None:
    sys.exit(main())


if __name__ == "__main__":
    run()
