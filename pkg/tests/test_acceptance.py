"""Acceptance gate. Each test records one PASS/FAIL line, printed at the end of the run."""

import json
import math
import os
import random
import shutil
import time
from pathlib import Path

import pytest

from conftest import record_criterion
from llm_ham.backends import AgentBackendConfig, BackendKind, OracleBackend
from llm_ham.cli import main
from llm_ham.experiments import GridSpec, default_run, run_grid
from llm_ham.ham_core import (
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
    fundamentalist_expectation,
    reduced_form_next_price,
    trend_follower_expectation,
)
from llm_ham.prompts import ParseError, ParseStatus, parse_expectations, parse_unified, parse_weights
from llm_ham.replication import ReplicationPlan, TranscriptStore, run_plan
from llm_ham.prompts import VariantId

HERE = Path(__file__).parent
GOLDEN = HERE / "golden"
FIXTURE = HERE / "fixtures" / "replay_49ok_1bad.jsonl"
TABLES = ("w_fund", "alpha", "beta", "delta_e")


def _check(label, fn):
    """Run ``fn`` (returns bool or raises) and record the outcome before asserting."""
    try:
        ok = bool(fn())
    except Exception:
        record_criterion(label, False)
        raise
    record_criterion(label, ok)
    assert ok, label


def _snapshot(rng, min_denominator=1.0):
    p_t = rng.uniform(1000, 3000)
    gap = rng.choice((-1, 1)) * rng.uniform(min_denominator, 900)
    trend = rng.choice((-1, 1)) * rng.uniform(min_denominator, 300)
    return MarketSnapshot(p_t, p_t - trend, p_t + gap)


def _rel(a, b):
    return abs(a - b) / abs(b) if b else abs(a - b)


def test_c1_extraction_round_trips():
    rng = random.Random(1)
    cases = [(_snapshot(rng), rng.uniform(0, 1), rng.uniform(-3, 3)) for _ in range(10_000)]

    def run():
        start = time.perf_counter()
        worst = 0.0
        for s, a, b in cases:
            worst = max(
                worst,
                _rel(extract_alpha(fundamentalist_expectation(s, a), s), a),
                _rel(extract_beta(trend_follower_expectation(s, b), s), b),
            )
        return worst <= 1e-9 and time.perf_counter() - start < 1.0

    _check("C1 extraction round-trips, 10k cases, rel <= 1e-9, < 1 s", run)


def test_c2_aggregation_identity():
    rng = random.Random(2)

    def run():
        for _ in range(10_000):
            s = _snapshot(rng, min_denominator=0.0)
            delta, alpha, beta = rng.uniform(0, 1), rng.uniform(0, 1), rng.uniform(-3, 3)
            composed = aggregate_expected_price(
                StrategyWeights.from_fund(delta),
                ExpectationPair(fundamentalist_expectation(s, alpha), trend_follower_expectation(s, beta)),
            )
            reduced = reduced_form_next_price(s, delta, alpha, beta)
            if _rel(reduced, composed) > 1e-9:
                return False
            if expected_price_variation(delta, ReactionParams(alpha, beta), s) != reduced - s.p_t:
                return False
        return True

    _check("C2 aggregation identity, 10k cases, rel <= 1e-9; variation exact", run)


def test_c3_dogmatic_fundamentalists():
    spec = GridSpec()

    def run():
        for gap, trend in spec.cells():
            s = spec.snapshot(gap, trend)
            for beta in (-1.0, 0.0, 0.5, 2.0):
                expected = reduced_form_next_price(s, 1.0, 1.0, beta)
                if expected != s.p_fund:
                    return False
                err = forecast_error(expected, s.p_t)
                if (err > 0) - (err < 0) != (gap > 0) - (gap < 0):
                    return False
        return True

    _check("C3 dogmatic limit: expected = fundamental, error sign follows gap on 121 cells", run)


def test_c4_oracle_grid_golden(tmp_path):
    out = tmp_path / "grid"

    def run():
        start = time.perf_counter()
        code = main(["run-grid", "--backend", "oracle", "--reps", "50", "--out", str(out)])
        elapsed = time.perf_counter() - start
        if code != 0 or elapsed >= 10:
            return False
        if any((out / f"{q}.csv").read_bytes() != (GOLDEN / f"{q}.csv").read_bytes() for q in TABLES):
            return False
        tables = {q: _read(out / f"{q}.csv") for q in TABLES}
        w_ok = [tables["w_fund"][c] == 0.9 for c in tables["w_fund"] if c[0] >= 0]
        a_ok = [tables["alpha"][c] == 0.95 for c in tables["alpha"] if c[0] != 0]
        b_ok = [
            tables["beta"][(g, t)] == (-0.5 if g >= 0 and t < 0 else 0.5)
            for (g, t) in tables["beta"] if t != 0
        ]
        return len(w_ok) == 66 and all(w_ok) and len(a_ok) == 110 and all(a_ok) and len(b_ok) == 110 and all(b_ok)

    _check("C4 oracle grid n=50 matches golden tables byte-for-byte, < 10 s", run)


def _read(path):
    import csv

    with open(path) as fh:
        return {
            (float(r["gap"]), float(r["trend"])): (None if r["value"] == "" else float(r["value"]))
            for r in csv.DictReader(fh)
        }


def test_c5_grid_geometry():
    def run():
        spec = GridSpec()
        cells = spec.cells()
        return (
            len(cells) == 121
            and {g for g, _ in cells} == {-600.0 + 120 * k for k in range(11)}
            and {t for _, t in cells} == {-100.0 + 20 * k for k in range(11)}
        )

    _check("C5 default grid: 121 cells, gap -600..600 step 120, trend -100..100 step 20", run)


def test_c6_replication_accounting(tmp_path):
    def run():
        snap = MarketSnapshot(1333, 1313, 1453)
        cfg = AgentBackendConfig(backend_kind=BackendKind.REPLAY, replay_path=str(FIXTURE))
        agg = run_plan(ReplicationPlan(VariantId.EXPECTATION_V0, snap, 50, cfg), TranscriptStore(tmp_path / "t.jsonl"))
        e_f, e_t = [], []
        for line in FIXTURE.read_text().splitlines():
            text = json.loads(line)["raw_text"]
            try:
                a, b = (float(x) for x in text.split(","))
            except ValueError:
                continue
            e_f.append(a)
            e_t.append(b)
        mean_f, mean_t = sum(e_f) / len(e_f), sum(e_t) / len(e_t)
        mean_alpha = sum((x - 1333) / 120 for x in e_f) / len(e_f)
        mean_beta = sum((x - 1333) / 20 for x in e_t) / len(e_t)
        return (
            (agg.n_ok, agg.n_failed) == (49, 1)
            and math.isclose(agg.mean_e_fund, mean_f, rel_tol=1e-12)
            and math.isclose(agg.mean_e_trend, mean_t, rel_tol=1e-12)
            and math.isclose(agg.mean_alpha, mean_alpha, rel_tol=1e-12)
            and math.isclose(agg.mean_beta, mean_beta, rel_tol=1e-12)
        )

    _check("C6 replay fixture 49 OK + 1 malformed: n_ok=49, n_failed=1, means to 1e-12", run)


def test_c7_moving_average():
    rng = random.Random(7)

    def run():
        for _ in range(1000):
            n = rng.randint(13, 120)
            xs = [rng.uniform(-5, 5) for _ in range(n)]
            ma = centered_moving_average(xs, 13)
            if ma[:6] != [None] * 6 or ma[-6:] != [None] * 6:
                return False
            for i in range(6, n - 6):
                brute = sum(xs[i - 6 : i + 7]) / 13
                if ma[i] is None or abs(ma[i] - brute) > 1e-12:
                    return False
        return True

    _check("C7 centered 13-month MA vs brute force on 1,000 series, 1e-12, 6+6 edges missing", run)


def _fuzz_text(rng):
    if rng.random() < 0.5:
        return bytes(rng.getrandbits(8) for _ in range(rng.randint(0, 40))).decode("latin-1")
    alphabet = "0123456789.,-+ \"'“”\n\teE"
    return "".join(rng.choice(alphabet) for _ in range(rng.randint(0, 30)))


def test_c8_parser_robustness():
    rng = random.Random(8)

    def run():
        for _ in range(100_000):
            text = _fuzz_text(rng)
            for parse in (parse_weights, parse_expectations, parse_unified):
                try:
                    parse(text)
                except ParseError:
                    pass
        accepted = [
            parse_weights("0.7, 0.3"), parse_weights("0.7,0.3"), parse_weights('"0.7", "0.3"'),
            parse_expectations("1400, 1350"), parse_expectations("1400,1350"),
        ]
        w, e = parse_unified('"0.7", "0.3", "1400", "1350"')
        parse_unified('"0.7","0.3","1400","1350"')
        in_band = True
        for a, b in (("0.5", "0.48"), ("0.5", "0.52"), ("0.49", "0.5"), ("0.51", "0.5")):
            sw = parse_weights(f"{a}, {b}")
            in_band &= math.isclose(sw.w_fund + sw.w_trend, 1.0) and sw.w_fund == float(a) / (float(a) + float(b))
        rejected = 0
        for a, b in (("0.5", "0.47"), ("0.5", "0.53"), ("0.6", "0.6")):
            try:
                parse_weights(f"{a}, {b}")
            except ParseError as exc:
                rejected += exc.status is ParseStatus.SUM_VIOLATION
        return len(accepted) == 5 and w.w_fund == 0.7 and e.e_fund == 1400 and in_band and rejected == 3

    _check("C8 parsers total on 100k random strings; canonical/quoted/no-space accepted; 0.98-1.02 band", run)


def _strip_timestamps(path):
    return [{k: v for k, v in json.loads(line).items() if k != "timestamp"} for line in path.read_text().splitlines()]


def test_c9_determinism_and_resume(tmp_path):
    class Counting(OracleBackend):
        calls = 0

        def complete(self, prompt):
            Counting.calls += 1
            return super().complete(prompt)

    def run():
        a, b = tmp_path / "a", tmp_path / "b"
        args = ["run-grid", "--backend", "oracle", "--reps", "50"]
        if main(args + ["--out", str(a)]) or main(args + ["--out", str(b)]):
            return False
        for path in sorted(a.glob("*.*")):
            if path.read_bytes() != (b / path.name).read_bytes():
                return False
        for path in sorted((a / "transcripts").glob("*.jsonl")):
            if _strip_timestamps(path) != _strip_timestamps(b / "transcripts" / path.name):
                return False

        # cut every transcript to its first 25 replications and resume
        half = tmp_path / "half"
        shutil.copytree(a / "transcripts", half / "transcripts")
        for path in (half / "transcripts").glob("*.jsonl"):
            lines = path.read_text().splitlines()
            path.write_text("\n".join(lines[:25]) + "\n")
        cfg = AgentBackendConfig(backend_kind=BackendKind.ORACLE)
        spec = GridSpec()
        result = run_grid(spec, default_run(spec, cfg, n=50), cfg, half, backend=Counting(cfg))
        if Counting.calls != 242 * 25:
            return False
        return all(result.tables[q] == _read(a / f"{q}.csv") for q in TABLES)

    _check("C9 two oracle runs byte-identical; resume issues only missing replications", run)


@pytest.mark.live
def test_c10_live_qualitative(tmp_path):
    label = "C10 live gpt-4o-mini: mean alpha in [0,1]; gap >= 0 half-plane favours fundamentalists"
    if not (os.environ.get("OPENAI_API_KEY") and os.environ.get("LLM_HAM_LIVE") == "1"):
        record_criterion(label, None)
        pytest.skip("set OPENAI_API_KEY and LLM_HAM_LIVE=1 to run against the remote backend")
    out = tmp_path / "live"
    ini = tmp_path / "live.ini"
    ini.write_text("[grid]\ntrend_min = -20\ntrend_max = 20\n")
    code = main(["run-grid", "--config", str(ini), "--backend", "remote", "--allow-network", "--model", "gpt-4o-mini",
                 "--temperature", "1", "--reps", "50", "--out", str(out)])

    def run():
        if code != 0:
            return False
        alpha = _read(out / "alpha.csv")
        w = _read(out / "w_fund.csv")
        in_range = all(0 <= v <= 1 for v in alpha.values() if v is not None)
        upper = [v for (g, _), v in w.items() if g >= 0 and v is not None]
        lower = [v for (g, _), v in w.items() if g < 0 and v is not None]
        return in_range and sum(upper) / len(upper) > sum(lower) / len(lower)

    _check(label, run)
