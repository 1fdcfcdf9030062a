"""Monte Carlo replication of one prompt on one snapshot.

Every raw reply is appended to a JSONL transcript before aggregation, so an
interrupted run can be resumed and any aggregate can be recomputed from disk.
"""

from __future__ import annotations

import csv
import datetime as dt
import enum
import io
import json
import logging
import statistics
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence

from .backends import AgentBackendConfig, Backend, BackendError, BackendErrorCode, BackendKind, make_backend
from .ham_core import MarketSnapshot, extract_alpha, extract_beta
from .prompts import DEFAULT_FORMAT, ParseError, ParseStatus, ValueFormat, VariantId, parse_reply, render

logger = logging.getLogger(__name__)

MAX_REPLICATIONS = 10_000


class ParamMode(str, enum.Enum):
    """How per-cell alpha/beta are formed from the replies."""

    PER_REPLICATION = "per_replication"  # mean of per-reply ratios
    FROM_MEANS = "from_means"  # ratio applied to the mean expectation


class PlanErrorCode(str, enum.Enum):
    SINK_FAILED = "SINK_FAILED"
    ALL_REPLICATIONS_FAILED = "ALL_REPLICATIONS_FAILED"


class PlanError(RuntimeError):
    def __init__(self, code: PlanErrorCode, message: str):
        super().__init__(f"{code.value}: {message}")
        self.code = code
        self.message = message


@dataclass(frozen=True)
class ReplicationPlan:
    variant_id: VariantId
    snapshot: MarketSnapshot
    n_replications: int = 50
    backend: AgentBackendConfig = field(default_factory=AgentBackendConfig)
    value_format: ValueFormat = DEFAULT_FORMAT

    def __post_init__(self) -> None:
        object.__setattr__(self, "variant_id", VariantId(self.variant_id))
        if not 1 <= self.n_replications <= MAX_REPLICATIONS:
            raise ValueError(f"n_replications must lie in [1, {MAX_REPLICATIONS}]")

    @property
    def key(self) -> tuple:
        s = self.snapshot
        return (self.variant_id.value, s.p_t, s.p_prev, s.p_fund, self.backend.model_name, self.backend.temperature)

    @property
    def plan_id(self) -> str:
        s = self.snapshot
        return (
            f"{self.variant_id.value}_pt{s.p_t:g}_pp{s.p_prev:g}_pf{s.p_fund:g}"
            f"_{self.backend.model_name}_T{self.backend.temperature:g}"
        )


@dataclass
class ReplicationRecord:
    variant_id: str
    p_t: float
    p_prev: float
    p_fund: float
    replication_index: int
    raw_text: str
    model_name: str
    temperature: float
    timestamp: str
    parse_status: ParseStatus
    w_fund: Optional[float] = None
    w_trend: Optional[float] = None
    e_fund: Optional[float] = None
    e_trend: Optional[float] = None

    def __post_init__(self) -> None:
        self.parse_status = ParseStatus(self.parse_status)

    @property
    def key(self) -> tuple:
        return (self.variant_id, self.p_t, self.p_prev, self.p_fund, self.model_name, self.temperature)

    @property
    def ok(self) -> bool:
        return self.parse_status is ParseStatus.OK

    def to_json(self) -> str:
        d = asdict(self)
        d["parse_status"] = self.parse_status.value
        return json.dumps(d, ensure_ascii=False)

    @classmethod
    def from_dict(cls, d: dict) -> "ReplicationRecord":
        rec = cls(**d)
        for name in ("p_t", "p_prev", "p_fund", "temperature"):
            setattr(rec, name, float(getattr(rec, name)))
        rec.replication_index = int(rec.replication_index)
        return rec


class TranscriptStore:
    """Append-only JSONL sink and source. Appends are serialised with a lock."""

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self._lock = threading.Lock()

    def append(self, record: ReplicationRecord) -> None:
        line = record.to_json() + "\n"
        try:
            with self._lock:
                self.path.parent.mkdir(parents=True, exist_ok=True)
                with open(self.path, "a", encoding="utf-8") as fh:
                    fh.write(line)
        except OSError as exc:
            raise PlanError(PlanErrorCode.SINK_FAILED, f"cannot append to {self.path}: {exc}") from exc

    def read(self) -> tuple[list[ReplicationRecord], list[str]]:
        """Return (records, warnings). Undecodable lines become warnings."""
        if not self.path.exists():
            return [], []
        records, warnings = [], []
        with open(self.path, encoding="utf-8", errors="replace") as fh:
            for lineno, line in enumerate(fh, 1):
                if not line.strip():
                    continue
                try:
                    records.append(ReplicationRecord.from_dict(json.loads(line)))
                except (json.JSONDecodeError, TypeError, ValueError) as exc:
                    warnings.append(f"{self.path}:{lineno}: corrupt record ({exc.__class__.__name__})")
        return records, warnings


@dataclass
class CellAggregate:
    snapshot: MarketSnapshot
    variant_id: str
    model_name: str
    temperature: float
    n_replications: int
    n_ok: int = 0
    n_failed: int = 0
    n_undefined_alpha: int = 0
    n_undefined_beta: int = 0
    mean_w_fund: Optional[float] = None
    sd_w_fund: Optional[float] = None
    mean_e_fund: Optional[float] = None
    sd_e_fund: Optional[float] = None
    mean_e_trend: Optional[float] = None
    sd_e_trend: Optional[float] = None
    mean_alpha: Optional[float] = None
    sd_alpha: Optional[float] = None
    mean_beta: Optional[float] = None
    sd_beta: Optional[float] = None
    warnings: list[str] = field(default_factory=list)
    new_requests: int = 0


AGGREGATE_COLUMNS = (
    "p_t", "p_prev", "p_fund", "variant_id", "model", "temperature",
    "n_ok", "n_failed", "n_undefined_alpha", "n_undefined_beta",
    "mean_w_fund", "sd_w_fund", "mean_e_fund", "sd_e_fund",
    "mean_e_trend", "sd_e_trend", "mean_alpha", "sd_alpha", "mean_beta", "sd_beta",
)  # fmt: skip


def fmt_float(x: Optional[float]) -> str:
    """Shortest round-trip text; MISSING is the empty string."""
    if x is None:
        return ""
    return repr(float(x))


def parse_float(text: str) -> Optional[float]:
    return None if text == "" else float(text)


def aggregate_row(agg: CellAggregate) -> dict[str, str]:
    s = agg.snapshot
    row = {
        "p_t": fmt_float(s.p_t),
        "p_prev": fmt_float(s.p_prev),
        "p_fund": fmt_float(s.p_fund),
        "variant_id": agg.variant_id,
        "model": agg.model_name,
        "temperature": fmt_float(agg.temperature),
    }
    for name in AGGREGATE_COLUMNS[6:10]:
        row[name] = str(getattr(agg, name))
    for name in AGGREGATE_COLUMNS[10:]:
        row[name] = fmt_float(getattr(agg, name))
    return row


def write_aggregates_csv(aggs: Iterable[CellAggregate], path: str | Path) -> None:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=AGGREGATE_COLUMNS, lineterminator="\n")
    writer.writeheader()
    for agg in aggs:
        writer.writerow(aggregate_row(agg))
    Path(path).write_text(buf.getvalue(), encoding="utf-8")


def _stats(values: Sequence[float]) -> tuple[Optional[float], Optional[float]]:
    # fmean sums exactly and pstdev works in exact fractions, so neither depends on order
    if not values:
        return None, None
    return statistics.fmean(values), statistics.pstdev(values)


def aggregate_records(
    plan: ReplicationPlan,
    records: Sequence[ReplicationRecord],
    n_corrupt: int = 0,
    param_mode: ParamMode = ParamMode.PER_REPLICATION,
) -> CellAggregate:
    """Per-cell means and population standard deviations over OK replies."""
    snap = plan.snapshot
    ok = [r for r in records if r.ok]
    agg = CellAggregate(
        snapshot=snap,
        variant_id=plan.variant_id.value,
        model_name=plan.backend.model_name,
        temperature=plan.backend.temperature,
        n_replications=plan.n_replications,
        n_ok=len(ok),
        n_failed=len(records) - len(ok) + n_corrupt,
    )
    w = [r.w_fund for r in ok if r.w_fund is not None]
    ef = [r.e_fund for r in ok if r.e_fund is not None]
    et = [r.e_trend for r in ok if r.e_trend is not None]
    agg.mean_w_fund, agg.sd_w_fund = _stats(w)
    agg.mean_e_fund, agg.sd_e_fund = _stats(ef)
    agg.mean_e_trend, agg.sd_e_trend = _stats(et)

    if ParamMode(param_mode) is ParamMode.PER_REPLICATION:
        alphas = [extract_alpha(e, snap) for e in ef]
        betas = [extract_beta(e, snap) for e in et]
        agg.n_undefined_alpha = sum(a is None for a in alphas)
        agg.n_undefined_beta = sum(b is None for b in betas)
        agg.mean_alpha, agg.sd_alpha = _stats([a for a in alphas if a is not None])
        agg.mean_beta, agg.sd_beta = _stats([b for b in betas if b is not None])
    else:
        if agg.mean_e_fund is not None:
            agg.mean_alpha = extract_alpha(agg.mean_e_fund, snap)
            agg.n_undefined_alpha = len(ef) if agg.mean_alpha is None else 0
        if agg.mean_e_trend is not None:
            agg.mean_beta = extract_beta(agg.mean_e_trend, snap)
            agg.n_undefined_beta = len(et) if agg.mean_beta is None else 0
    return agg


def _now() -> str:
    return dt.datetime.now(dt.timezone.utc).isoformat(timespec="milliseconds")


def _replicate(plan: ReplicationPlan, backend: Backend, index: int) -> ReplicationRecord:
    snap = plan.snapshot
    base = dict(
        variant_id=plan.variant_id.value,
        p_t=snap.p_t,
        p_prev=snap.p_prev,
        p_fund=snap.p_fund,
        replication_index=index,
        model_name=plan.backend.model_name,
        temperature=plan.backend.temperature,
    )
    prompt = render(plan.variant_id, snap, plan.value_format)
    try:
        reply = backend.complete(prompt)
    except BackendError as exc:
        if exc.code is BackendErrorCode.AUTH_FAILED:
            raise
        logger.warning("replication %d of %s failed: %s", index, plan.plan_id, exc)
        return ReplicationRecord(raw_text="", timestamp=_now(), parse_status=ParseStatus.TRANSPORT_FAILED, **base)
    try:
        parsed = parse_reply(plan.variant_id.schema, reply.raw_text)
    except ParseError as exc:
        return ReplicationRecord(raw_text=reply.raw_text, timestamp=_now(), parse_status=exc.status, **base)
    rec = ReplicationRecord(raw_text=reply.raw_text, timestamp=_now(), parse_status=ParseStatus.OK, **base)
    if parsed.weights is not None:
        rec.w_fund, rec.w_trend = parsed.weights.w_fund, parsed.weights.w_trend
    if parsed.expectations is not None:
        rec.e_fund, rec.e_trend = parsed.expectations.e_fund, parsed.expectations.e_trend
    return rec


def _issue(
    plan: ReplicationPlan, backend: Backend, store: TranscriptStore, indices: Sequence[int]
) -> list[ReplicationRecord]:
    def one(i: int) -> ReplicationRecord:
        rec = _replicate(plan, backend, i)
        store.append(rec)
        return rec

    workers = plan.backend.max_in_flight
    if plan.backend.backend_kind is not BackendKind.REMOTE or workers == 1 or len(indices) < 2:
        return [one(i) for i in indices]
    with ThreadPoolExecutor(max_workers=min(workers, len(indices))) as pool:
        return list(pool.map(one, indices))


def _check_transport(records: Sequence[ReplicationRecord], plan: ReplicationPlan) -> None:
    if records and all(r.parse_status is ParseStatus.TRANSPORT_FAILED for r in records):
        raise PlanError(
            PlanErrorCode.ALL_REPLICATIONS_FAILED,
            f"all {len(records)} replications of {plan.plan_id} failed at transport level",
        )


def run_plan(
    plan: ReplicationPlan,
    store: TranscriptStore,
    backend: Optional[Backend] = None,
    param_mode: ParamMode = ParamMode.PER_REPLICATION,
) -> CellAggregate:
    """Issue all ``n_replications`` completions, persist them and aggregate."""
    backend = backend or make_backend(plan.backend)
    records = _issue(plan, backend, store, range(plan.n_replications))
    _check_transport(records, plan)
    agg = aggregate_records(plan, records, param_mode=param_mode)
    agg.new_requests = len(records)
    return agg


def existing_records(
    plan: ReplicationPlan, records: Iterable[ReplicationRecord]
) -> list[ReplicationRecord]:
    """First record per replication index for this plan, indices beyond n dropped."""
    seen: dict[int, ReplicationRecord] = {}
    for rec in records:
        if rec.key == plan.key and 0 <= rec.replication_index < plan.n_replications:
            seen.setdefault(rec.replication_index, rec)
    return [seen[i] for i in sorted(seen)]


def resume(
    plan: ReplicationPlan,
    store: TranscriptStore,
    backend: Optional[Backend] = None,
    param_mode: ParamMode = ParamMode.PER_REPLICATION,
) -> CellAggregate:
    """Complete a partially persisted plan; a finished plan issues no requests.

    Corrupt lines in the store each occupy one replication slot as a failure.
    The store is expected to hold one plan, or corrupt lines cannot be attributed.
    """
    stored, warnings = store.read()
    have = existing_records(plan, stored)
    n_corrupt = min(len(warnings), plan.n_replications - len(have))
    taken = {r.replication_index for r in have}
    missing = [i for i in range(plan.n_replications) if i not in taken]
    todo = missing[: plan.n_replications - len(have) - n_corrupt]
    new = []
    if todo:
        new = _issue(plan, backend or make_backend(plan.backend), store, todo)
    records = have + new
    _check_transport(records, plan)
    agg = aggregate_records(plan, records, n_corrupt=n_corrupt, param_mode=param_mode)
    agg.warnings = warnings
    agg.new_requests = len(new)
    return agg


def _plan_from_record(rec: ReplicationRecord, n: int) -> ReplicationPlan:
    cfg = AgentBackendConfig(model_name=rec.model_name, temperature=rec.temperature)
    return ReplicationPlan(VariantId(rec.variant_id), MarketSnapshot(rec.p_t, rec.p_prev, rec.p_fund), n, cfg)


def reaggregate_dir(
    transcript_dir: str | Path, param_mode: ParamMode = ParamMode.PER_REPLICATION
) -> tuple[list[dict[str, str]], list[str]]:
    """Rebuild aggregate CSV rows from every ``*.jsonl`` transcript in a directory.

    Each file is taken to hold one plan; n is its record count plus corrupt
    lines. Plans that never got past the transport layer are skipped, as the
    drivers never aggregate them.
    """
    rows, all_warnings = [], []
    for path in sorted(Path(transcript_dir).glob("*.jsonl")):
        records, warnings = TranscriptStore(path).read()
        all_warnings.extend(warnings)
        by_key: dict[tuple, list[ReplicationRecord]] = {}
        for rec in records:
            by_key.setdefault(rec.key, []).append(rec)
        corrupt = len(warnings) if len(by_key) == 1 else 0
        for recs in by_key.values():
            n = max(r.replication_index for r in recs) + 1
            n = max(n, len({r.replication_index for r in recs}) + corrupt)
            plan = _plan_from_record(recs[0], n)
            have = existing_records(plan, recs)
            if all(r.parse_status is ParseStatus.TRANSPORT_FAILED for r in have):
                continue
            rows.append(aggregate_row(aggregate_records(plan, have, corrupt, param_mode)))
    return rows, all_warnings
