"""Artificial-market grid, historical time series and the robustness sweeps."""

from __future__ import annotations

import csv
import dataclasses
import datetime as dt
import enum
import hashlib
import io
import itertools
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence, Union

from .backends import AgentBackendConfig, Backend, BackendKind, make_backend
from .ham_core import (
    DividendRecord,
    ExpectationPair,
    MarketSnapshot,
    ReactionParams,
    StrategyWeights,
    aggregate_expected_price,
    centered_moving_average,
    expected_price_variation,
    extract_alpha,
    extract_beta,
    forecast_error,
    gordon_fundamental,
)
from .prompts import VariantId
from .replication import (
    CellAggregate,
    ParamMode,
    PlanError,
    PlanErrorCode,
    ReplicationPlan,
    TranscriptStore,
    existing_records,
    fmt_float,
    resume,
    write_aggregates_csv,
)

logger = logging.getLogger(__name__)

GRID_QUANTITIES = ("w_fund", "alpha", "beta", "delta_e")
DEFAULT_GORDON_GROWTH = 0.0058
DEFAULT_GORDON_DISCOUNT = 0.0075


class DataError(ValueError):
    def __init__(self, code: str, message: str):
        super().__init__(f"{code}: {message}")
        self.code = code
        self.message = message


class VariationMode(str, enum.Enum):
    MEANS_THEN_FORMULA = "means"
    PER_REPLICATION = "per_replication"


def _axis(lo: float, hi: float, step: float, name: str) -> list[float]:
    if step <= 0:
        raise ValueError(f"{name} step must be positive")
    if hi < lo:
        raise ValueError(f"{name} range is empty")
    count = (hi - lo) / step
    if abs(count - round(count)) > 1e-9:
        raise ValueError(f"{name} range is not a whole number of steps")
    return [lo + k * step for k in range(int(round(count)) + 1)]


@dataclass(frozen=True)
class GridSpec:
    """Lattice of (fundamental - price, price - lagged price) at fixed current price."""

    p_t: float = 1333.0
    gap_min: float = -600.0
    gap_max: float = 600.0
    gap_step: float = 120.0
    trend_min: float = -100.0
    trend_max: float = 100.0
    trend_step: float = 20.0

    def __post_init__(self) -> None:
        self.gaps
        self.trends

    @property
    def gaps(self) -> list[float]:
        return _axis(self.gap_min, self.gap_max, self.gap_step, "gap")

    @property
    def trends(self) -> list[float]:
        return _axis(self.trend_min, self.trend_max, self.trend_step, "trend")

    def cells(self) -> list[tuple[float, float]]:
        return [(g, d) for g in self.gaps for d in self.trends]

    def snapshot(self, gap: float, trend: float) -> MarketSnapshot:
        return MarketSnapshot(self.p_t, self.p_t - trend, self.p_t + gap)


@dataclass(frozen=True)
class TimeSeriesSpec:
    input_path: str
    start: Optional[str] = None  # YYYY-MM, inclusive
    end: Optional[str] = None
    gordon_growth: float = DEFAULT_GORDON_GROWTH
    gordon_discount: float = DEFAULT_GORDON_DISCOUNT
    ma_window: int = 13

    def __post_init__(self) -> None:
        if self.ma_window <= 0 or self.ma_window % 2 == 0:
            raise ValueError("ma_window must be a positive odd integer")


@dataclass(frozen=True)
class RobustnessMatrix:
    temperatures: tuple[float, ...] = (1.0,)
    models: tuple[str, ...] = ("gpt-4o-mini",)
    p_t_levels: tuple[float, ...] = (1333.0,)
    prompt_variants: tuple[VariantId, ...] = (VariantId.COMPOSITION_V0,)
    replication_counts: tuple[int, ...] = (50,)

    def __post_init__(self) -> None:
        object.__setattr__(self, "prompt_variants", tuple(VariantId(v) for v in self.prompt_variants))
        for name in ("temperatures", "models", "p_t_levels", "prompt_variants", "replication_counts"):
            if not getattr(self, name):
                raise ValueError(f"{name} must not be empty")


def standard_sweeps() -> dict[str, RobustnessMatrix]:
    """The one-axis-at-a-time robustness sweeps around the baseline run."""
    return {
        "baseline": RobustnessMatrix(),
        "prompt_variants": RobustnessMatrix(
            prompt_variants=tuple(VariantId(f"COMPOSITION_V{k}") for k in range(1, 6)),
            replication_counts=(10,),
        ),
        "unified_prompt": RobustnessMatrix(prompt_variants=(VariantId.UNIFIED,)),
        "current_price": RobustnessMatrix(p_t_levels=(833.0, 1083.0, 1583.0, 1833.0)),
        "replications": RobustnessMatrix(replication_counts=(100,)),
        "model": RobustnessMatrix(models=("gpt-3.5-turbo",)),
        "temperature": RobustnessMatrix(temperatures=(0.4, 0.7)),
    }


@dataclass(frozen=True)
class MatrixRun:
    """One point of a robustness matrix, bound to its experiment spec."""

    run_id: str
    temperature: float
    model: str
    p_t: Optional[float]
    variant: VariantId
    n_replications: int
    spec: Union[GridSpec, TimeSeriesSpec]

    def parameters(self) -> dict:
        return {
            "run_id": self.run_id,
            "temperature": self.temperature,
            "model": self.model,
            "p_t": self.p_t,
            "variant": self.variant.value,
            "n_replications": self.n_replications,
            "spec_type": type(self.spec).__name__,
            "spec": dataclasses.asdict(self.spec),
        }

    def backend_config(self, base: AgentBackendConfig) -> AgentBackendConfig:
        return dataclasses.replace(base, model_name=self.model, temperature=self.temperature)


def _run_id(temperature: float, model: str, p_t: Optional[float], variant: VariantId, n: int, spec) -> str:
    params = {
        "temperature": temperature,
        "model": model,
        "p_t": p_t,
        "variant": variant.value,
        "n": n,
        "spec": dataclasses.asdict(spec),
    }
    digest = hashlib.sha256(json.dumps(params, sort_keys=True).encode()).hexdigest()[:8]
    pt = "" if p_t is None else f"_pt{p_t:g}"
    return f"T{temperature:g}_{model}{pt}_{variant.value}_n{n}_{digest}"


def expand_matrix(matrix: RobustnessMatrix, base: Union[GridSpec, TimeSeriesSpec]) -> list[MatrixRun]:
    """Enumerate runs lexicographically over (temperature, model, p_t, variant, n).

    For a time-series base the current-price axis does not apply and is collapsed.
    """
    p_levels: Sequence[Optional[float]]
    if isinstance(base, GridSpec):
        p_levels = sorted(set(float(p) for p in matrix.p_t_levels))
    else:
        p_levels = [None]
    runs = []
    for temp, model, p_t, variant, n in itertools.product(
        sorted(set(float(t) for t in matrix.temperatures)),
        sorted(set(matrix.models)),
        p_levels,
        sorted(set(matrix.prompt_variants), key=lambda v: v.value),
        sorted(set(int(n) for n in matrix.replication_counts)),
    ):
        spec = dataclasses.replace(base, p_t=p_t) if isinstance(base, GridSpec) else base
        runs.append(MatrixRun(_run_id(temp, model, p_t, variant, n, spec), temp, model, p_t, variant, n, spec))
    return runs


# -- shared plumbing ---------------------------------------------------------


def _plans_for(
    variant: VariantId, snapshot: MarketSnapshot, n: int, backend_config: AgentBackendConfig
) -> tuple[ReplicationPlan, ReplicationPlan]:
    """(composition plan, expectation plan); the unified prompt serves both."""
    if variant is VariantId.UNIFIED:
        plan = ReplicationPlan(variant, snapshot, n, backend_config)
        return plan, plan
    if variant is VariantId.EXPECTATION_V0:
        raise ValueError("the swept prompt variant must be a composition or unified prompt")
    return (
        ReplicationPlan(variant, snapshot, n, backend_config),
        ReplicationPlan(VariantId.EXPECTATION_V0, snapshot, n, backend_config),
    )


class _Runner:
    """Runs plans against one backend, one transcript file per plan."""

    def __init__(self, transcript_dir: Path, backend: Backend, param_mode: ParamMode):
        self.dir = transcript_dir
        self.backend = backend
        self.param_mode = param_mode
        self.aggregates: list[CellAggregate] = []
        self.failures: list[str] = []
        self.warnings: list[str] = []
        self._cache: dict[tuple, Optional[CellAggregate]] = {}

    def store(self, plan: ReplicationPlan) -> TranscriptStore:
        return TranscriptStore(self.dir / f"{plan.plan_id}.jsonl")

    def run(self, plan: ReplicationPlan) -> Optional[CellAggregate]:
        key = (plan.key, plan.n_replications)
        if key in self._cache:
            return self._cache[key]
        try:
            agg: Optional[CellAggregate] = resume(plan, self.store(plan), self.backend, self.param_mode)
        except PlanError as exc:
            if exc.code is not PlanErrorCode.ALL_REPLICATIONS_FAILED:
                raise
            self.failures.append(str(exc))
            agg = None
        if agg is not None:
            self.aggregates.append(agg)
            self.warnings.extend(agg.warnings)
        self._cache[key] = agg
        return agg


def _mean_then_variation(
    comp: Optional[CellAggregate], expc: Optional[CellAggregate], snapshot: MarketSnapshot
) -> Optional[float]:
    if comp is None or expc is None:
        return None
    if comp.mean_w_fund is None or expc.mean_alpha is None or expc.mean_beta is None:
        return None
    params = ReactionParams(expc.mean_alpha, expc.mean_beta)
    return expected_price_variation(comp.mean_w_fund, params, snapshot)


def _per_replication_variation(
    runner: _Runner, comp_plan: ReplicationPlan, exp_plan: ReplicationPlan
) -> Optional[float]:
    """Mean over replication indices where both replies parsed and alpha, beta are defined."""
    snap = comp_plan.snapshot
    comp = {r.replication_index: r for r in existing_records(comp_plan, runner.store(comp_plan).read()[0]) if r.ok}
    expc = {r.replication_index: r for r in existing_records(exp_plan, runner.store(exp_plan).read()[0]) if r.ok}
    values = []
    for i in sorted(set(comp) & set(expc)):
        a = extract_alpha(expc[i].e_fund, snap)  # type: ignore[arg-type]
        b = extract_beta(expc[i].e_trend, snap)  # type: ignore[arg-type]
        if a is None or b is None:
            continue
        values.append(expected_price_variation(comp[i].w_fund, ReactionParams(a, b), snap))  # type: ignore[arg-type]
    return math.fsum(values) / len(values) if values else None


# -- grid --------------------------------------------------------------------


@dataclass
class GridResult:
    spec: GridSpec
    run: MatrixRun
    tables: dict[str, dict[tuple[float, float], Optional[float]]]
    aggregates: list[CellAggregate]
    failures: list[str] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)


def default_run(spec: Union[GridSpec, TimeSeriesSpec], backend_config: AgentBackendConfig, n: int = 50,
                variant: VariantId = VariantId.COMPOSITION_V0) -> MatrixRun:
    matrix = RobustnessMatrix(
        temperatures=(backend_config.temperature,),
        models=(backend_config.model_name,),
        p_t_levels=(spec.p_t,) if isinstance(spec, GridSpec) else (1333.0,),
        prompt_variants=(variant,),
        replication_counts=(n,),
    )
    (run,) = expand_matrix(matrix, spec)
    return run


def run_grid(
    spec: GridSpec,
    run: MatrixRun,
    backend_config: AgentBackendConfig,
    out_dir: str | Path,
    backend: Optional[Backend] = None,
    param_mode: ParamMode = ParamMode.PER_REPLICATION,
    variation_mode: VariationMode = VariationMode.MEANS_THEN_FORMULA,
) -> GridResult:
    """Run composition and expectation plans on every cell and assemble the four tables."""
    out = Path(out_dir)
    cfg = run.backend_config(backend_config)
    runner = _Runner(out / "transcripts", backend or make_backend(cfg), param_mode)
    tables: dict[str, dict] = {q: {} for q in GRID_QUANTITIES}
    for gap, trend in spec.cells():
        snap = spec.snapshot(gap, trend)
        comp_plan, exp_plan = _plans_for(run.variant, snap, run.n_replications, cfg)
        comp = runner.run(comp_plan)
        expc = runner.run(exp_plan)
        cell = (gap, trend)
        tables["w_fund"][cell] = comp.mean_w_fund if comp else None
        tables["alpha"][cell] = expc.mean_alpha if expc else None
        tables["beta"][cell] = expc.mean_beta if expc else None
        if VariationMode(variation_mode) is VariationMode.MEANS_THEN_FORMULA:
            tables["delta_e"][cell] = _mean_then_variation(comp, expc, snap)
        else:
            tables["delta_e"][cell] = _per_replication_variation(runner, comp_plan, exp_plan)
    return GridResult(spec, run, tables, runner.aggregates, runner.failures, runner.warnings)


def write_grid_table(table: dict[tuple[float, float], Optional[float]], path: str | Path) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["gap", "trend", "value"])
    for (gap, trend) in sorted(table):
        w.writerow([fmt_float(gap), fmt_float(trend), fmt_float(table[(gap, trend)])])
    Path(path).write_text(buf.getvalue(), encoding="utf-8")


def read_grid_table(path: str | Path) -> dict[tuple[float, float], Optional[float]]:
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != ["gap", "trend", "value"]:
            raise DataError("BAD_INPUT", f"{path}: expected header gap,trend,value")
        return {
            (float(r["gap"]), float(r["trend"])): (None if r["value"] == "" else float(r["value"]))
            for r in reader
        }


def _write_meta(path: Path, meta: dict) -> None:
    path.write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def write_grid_outputs(result: GridResult, out_dir: str | Path, extra_meta: Optional[dict] = None) -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for q in GRID_QUANTITIES:
        path = out / f"{q}.csv"
        write_grid_table(result.tables[q], path)
        meta = {"quantity": q, **result.run.parameters(), **(extra_meta or {})}
        _write_meta(out / f"{q}.meta.json", meta)
        written.append(path)
    write_aggregates_csv(_sorted_aggs(result.aggregates), out / "aggregates.csv")
    return written


def _sorted_aggs(aggs: Iterable[CellAggregate]) -> list[CellAggregate]:
    return sorted(aggs, key=lambda a: (a.variant_id, a.snapshot.p_fund, a.snapshot.p_prev, a.snapshot.p_t))


# -- time series -------------------------------------------------------------


def _month(text: str) -> dt.date:
    try:
        return dt.datetime.strptime(text.strip(), "%Y-%m").date()
    except ValueError:
        raise DataError("BAD_INPUT", f"date {text!r} is not YYYY-MM") from None


def _next_month(d: dt.date) -> dt.date:
    return dt.date(d.year + d.month // 12, d.month % 12 + 1, 1)


def load_price_csv(path: str | Path) -> list[DividendRecord]:
    """Read ``date,price,dividend`` monthly rows; gaps raise DATA_GAP naming the month."""
    try:
        fh = open(path, encoding="utf-8", newline="")
    except OSError as exc:
        raise DataError("BAD_INPUT", f"cannot read {path}: {exc}") from exc
    with fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or [f.strip() for f in reader.fieldnames] != ["date", "price", "dividend"]:
            raise DataError("BAD_INPUT", f"{path}: header must be date,price,dividend")
        records = []
        for lineno, row in enumerate(reader, 2):
            try:
                rec = DividendRecord(_month(row["date"]), float(row["price"]), float(row["dividend"]))
            except (TypeError, ValueError) as exc:
                if isinstance(exc, DataError):
                    raise
                raise DataError("BAD_INPUT", f"{path}:{lineno}: {exc}") from None
            if records:
                prev = records[-1].date
                if rec.date <= prev:
                    raise DataError("BAD_INPUT", f"{path}:{lineno}: dates must increase")
                if rec.date != _next_month(prev):
                    raise DataError("DATA_GAP", f"missing month {_next_month(prev):%Y-%m}")
            records.append(rec)
    if not records:
        raise DataError("BAD_INPUT", f"{path}: no data rows")
    return records


@dataclass
class TimeSeriesResultRow:
    date: dt.date
    price: float
    fundamental: float
    mean_w_fund: Optional[float]
    w_fund_ma13: Optional[float]
    mean_alpha: Optional[float]
    mean_beta: Optional[float]
    expected_price: Optional[float]
    forecast_error: Optional[float]
    mean_e_fund: Optional[float] = None
    mean_e_trend: Optional[float] = None


TIMESERIES_COLUMNS = tuple(f.name for f in dataclasses.fields(TimeSeriesResultRow))


@dataclass
class TimeSeriesResult:
    spec: TimeSeriesSpec
    run: MatrixRun
    rows: list[TimeSeriesResultRow]
    aggregates: list[CellAggregate]
    failures: list[str] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)


def run_timeseries(
    spec: TimeSeriesSpec,
    run: MatrixRun,
    backend_config: AgentBackendConfig,
    out_dir: str | Path,
    backend: Optional[Backend] = None,
    param_mode: ParamMode = ParamMode.PER_REPLICATION,
) -> TimeSeriesResult:
    """One row per month that has a predecessor in the data and falls in the date range."""
    data = load_price_csv(spec.input_path)
    start = _month(spec.start) if spec.start else None
    end = _month(spec.end) if spec.end else None
    if start and end and end < start:
        raise DataError("BAD_INPUT", "date range is empty")
    if start and not (data[0].date <= start <= data[-1].date):
        raise DataError("BAD_INPUT", f"start {spec.start} outside the data")
    if end and not (data[0].date <= end <= data[-1].date):
        raise DataError("BAD_INPUT", f"end {spec.end} outside the data")

    cfg = run.backend_config(backend_config)
    runner = _Runner(Path(out_dir) / "transcripts", backend or make_backend(cfg), param_mode)
    rows: list[TimeSeriesResultRow] = []
    for i in range(1, len(data)):
        rec = data[i]
        if (start and rec.date < start) or (end and rec.date > end):
            continue
        fundamental = gordon_fundamental(rec, spec.gordon_growth, spec.gordon_discount)
        try:
            snap = MarketSnapshot(rec.price, data[i - 1].price, fundamental)
        except ValueError as exc:
            raise DataError("BAD_INPUT", f"{rec.date:%Y-%m}: {exc}") from None
        comp_plan, exp_plan = _plans_for(run.variant, snap, run.n_replications, cfg)
        comp = runner.run(comp_plan)
        expc = runner.run(exp_plan)
        w = comp.mean_w_fund if comp else None
        e_f = expc.mean_e_fund if expc else None
        e_t = expc.mean_e_trend if expc else None
        expected = None
        if w is not None and e_f is not None and e_t is not None:
            expected = aggregate_expected_price(StrategyWeights.from_fund(w), ExpectationPair(e_f, e_t))
        rows.append(
            TimeSeriesResultRow(
                date=rec.date,
                price=rec.price,
                fundamental=fundamental,
                mean_w_fund=w,
                w_fund_ma13=None,
                mean_alpha=expc.mean_alpha if expc else None,
                mean_beta=expc.mean_beta if expc else None,
                expected_price=expected,
                forecast_error=None,
                mean_e_fund=e_f,
                mean_e_trend=e_t,
            )
        )
    if not rows:
        raise DataError("BAD_INPUT", "no months with a predecessor in the requested range")

    for row, nxt in zip(rows, rows[1:]):
        if row.expected_price is not None:
            row.forecast_error = forecast_error(row.expected_price, nxt.price)
    warnings = list(runner.warnings)
    if len(rows) >= spec.ma_window:
        ma = centered_moving_average([r.mean_w_fund for r in rows], spec.ma_window)
        for row, value in zip(rows, ma):
            row.w_fund_ma13 = value
    else:
        warnings.append(f"only {len(rows)} months, moving average of {spec.ma_window} left empty")
    return TimeSeriesResult(spec, run, rows, runner.aggregates, runner.failures, warnings)


def write_timeseries_table(rows: Sequence[TimeSeriesResultRow], path: str | Path) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(TIMESERIES_COLUMNS)
    for r in rows:
        w.writerow([r.date.strftime("%Y-%m")] + [fmt_float(getattr(r, c)) for c in TIMESERIES_COLUMNS[1:]])
    Path(path).write_text(buf.getvalue(), encoding="utf-8")


def read_timeseries_table(path: str | Path) -> list[TimeSeriesResultRow]:
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != TIMESERIES_COLUMNS:
            raise DataError("BAD_INPUT", f"{path}: unexpected time-series header")
        return [
            TimeSeriesResultRow(
                _month(r["date"]),
                *[None if r[c] == "" else float(r[c]) for c in TIMESERIES_COLUMNS[1:]],  # type: ignore[arg-type]
            )
            for r in reader
        ]


def write_timeseries_outputs(result: TimeSeriesResult, out_dir: str | Path, extra_meta: Optional[dict] = None) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "timeseries.csv"
    write_timeseries_table(result.rows, path)
    _write_meta(out / "timeseries.meta.json", {**result.run.parameters(), **(extra_meta or {})})
    write_aggregates_csv(_sorted_aggs(result.aggregates), out / "aggregates.csv")
    return path


def is_network_backend(config: AgentBackendConfig) -> bool:
    return config.backend_kind is BackendKind.REMOTE
