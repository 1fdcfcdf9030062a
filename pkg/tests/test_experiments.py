import csv
import datetime as dt
import json
import math

import pytest

from llm_ham.backends import AgentBackendConfig, BackendKind, OracleBackend, oracle_composition, oracle_expectations
from llm_ham.ham_core import centered_moving_average
from llm_ham.prompts import VariantId
from llm_ham.experiments import (
    DataError,
    GridSpec,
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


def write_prices(path, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["date", "price", "dividend"])
        w.writerows(rows)
    return path


def months(start, n):
    y, m = start
    out = []
    for _ in range(n):
        out.append(f"{y:04d}-{m:02d}")
        y, m = (y + 1, 1) if m == 12 else (y, m + 1)
    return out


# -- grid geometry -----------------------------------------------------------


def test_default_grid_geometry():
    spec = GridSpec()
    assert spec.gaps == [-600 + 120 * k for k in range(11)]
    assert spec.trends == [-100 + 20 * k for k in range(11)]
    assert len(spec.cells()) == 121 == len(set(spec.cells()))


def test_snapshot_reconstruction():
    s = GridSpec().snapshot(120, 20)
    assert (s.p_t, s.p_prev, s.p_fund) == (1333, 1313, 1453)
    assert (s.gap, s.trend) == (120, 20)


def test_coordinates_shared_across_price_levels():
    a, b = GridSpec(p_t=833), GridSpec(p_t=1833)
    assert a.cells() == b.cells()
    for gap, trend in a.cells():
        sa, sb = a.snapshot(gap, trend), b.snapshot(gap, trend)
        assert (sa.gap, sa.trend) == (sb.gap, sb.trend)


@pytest.mark.parametrize("kwargs", [dict(gap_step=0), dict(gap_step=130), dict(trend_min=10, trend_max=0)])
def test_bad_grid_rejected(kwargs):
    with pytest.raises(ValueError):
        GridSpec(**kwargs)


# -- oracle grid -------------------------------------------------------------


@pytest.fixture(scope="module")
def oracle_grid(tmp_path_factory):
    cfg = AgentBackendConfig(backend_kind=BackendKind.ORACLE)
    spec = GridSpec()
    out = tmp_path_factory.mktemp("grid")
    return run_grid(spec, default_run(spec, cfg, n=5), cfg, out), out


def test_oracle_grid_cells(oracle_grid):
    result, _ = oracle_grid
    t = result.tables
    assert t["w_fund"][(120, 20)] == 0.9
    for (gap, trend), w in t["w_fund"].items():
        s = result.spec.snapshot(gap, trend)
        assert w == pytest.approx(oracle_composition(s).w_fund, abs=1e-12)
        if gap >= 0:
            assert w == 0.9
    assert t["alpha"][(0, 0)] is None and t["beta"][(0, 0)] is None
    assert all(t["alpha"][(0, d)] is None for d in result.spec.trends)
    assert all(t["beta"][(g, 0)] is None for g in result.spec.gaps)
    assert t["delta_e"][(0, 40)] is None
    assert not result.failures and not result.warnings


def test_oracle_grid_delta_e_independent(oracle_grid):
    result, _ = oracle_grid
    for (gap, trend), value in result.tables["delta_e"].items():
        if gap == 0 or trend == 0:
            assert value is None
            continue
        w = 0.9 if gap >= 0 else (0.35 if trend < 0 else 0.5 + 0.4 * min(1, abs(gap) / 600))
        beta = -0.5 if (gap >= 0 and trend < 0) else 0.5
        expected = w * 0.95 * gap + (1 - w) * beta * trend
        assert value == pytest.approx(expected, rel=1e-9, abs=1e-9)


def test_grid_outputs_round_trip(oracle_grid, tmp_path):
    result, _ = oracle_grid
    write_grid_outputs(result, tmp_path)
    for q, table in result.tables.items():
        assert read_grid_table(tmp_path / f"{q}.csv") == table
        meta = json.loads((tmp_path / f"{q}.meta.json").read_text())
        assert meta["quantity"] == q and meta["n_replications"] == 5
    with open(tmp_path / "aggregates.csv") as fh:
        assert len(list(csv.DictReader(fh))) == 242


def test_per_replication_variation_matches_means_for_oracle(tmp_path):
    cfg = AgentBackendConfig(backend_kind=BackendKind.ORACLE)
    spec = GridSpec(gap_min=-120, gap_max=120, trend_min=-20, trend_max=20)
    run = default_run(spec, cfg, n=3)
    a = run_grid(spec, run, cfg, tmp_path / "a")
    b = run_grid(spec, run, cfg, tmp_path / "b", variation_mode=VariationMode.PER_REPLICATION)
    for cell, v in a.tables["delta_e"].items():
        w = b.tables["delta_e"][cell]
        assert (v is None) == (w is None)
        if v is not None:
            assert w == pytest.approx(v, rel=1e-12)


def test_unified_variant_grid(tmp_path):
    cfg = AgentBackendConfig(backend_kind=BackendKind.ORACLE)
    spec = GridSpec(gap_min=-120, gap_max=120, trend_min=-20, trend_max=20)
    result = run_grid(spec, default_run(spec, cfg, n=2, variant=VariantId.UNIFIED), cfg, tmp_path)
    assert result.tables["w_fund"][(120, 20)] == 0.9
    assert result.tables["alpha"][(120, 20)] == 0.95
    assert len(result.aggregates) == 9  # one shared plan per cell


def test_expectation_variant_cannot_be_swept(tmp_path):
    cfg = AgentBackendConfig(backend_kind=BackendKind.ORACLE)
    spec = GridSpec(gap_min=0, gap_max=0, trend_min=0, trend_max=0)
    with pytest.raises(ValueError):
        run_grid(spec, default_run(spec, cfg, n=1, variant=VariantId.EXPECTATION_V0), cfg, tmp_path)


# -- robustness matrix -------------------------------------------------------


def test_expand_default_matrix():
    runs = expand_matrix(RobustnessMatrix(), GridSpec())
    assert len(runs) == 1
    assert runs[0].p_t == 1333 and runs[0].n_replications == 50


def test_expand_matrix_order_and_ids():
    m = RobustnessMatrix(temperatures=(1.0, 0.4, 0.7), p_t_levels=(1833, 833, 1083, 1333, 1583))
    runs = expand_matrix(m, GridSpec())
    assert len(runs) == 15
    keys = [(r.temperature, r.p_t) for r in runs]
    assert keys == sorted(keys)
    assert [r.run_id for r in runs] == [r.run_id for r in expand_matrix(m, GridSpec())]
    assert len({r.run_id for r in runs}) == 15
    assert all(r.spec.p_t == r.p_t for r in runs)


def test_expand_matrix_timeseries_collapses_price_axis(tmp_path):
    spec = TimeSeriesSpec(str(tmp_path / "x.csv"))
    runs = expand_matrix(RobustnessMatrix(p_t_levels=(833, 1333)), spec)
    assert len(runs) == 1 and runs[0].p_t is None


def test_standard_sweeps_shapes():
    sweeps = standard_sweeps()
    sizes = {name: len(expand_matrix(m, GridSpec())) for name, m in sweeps.items()}
    assert sizes == {
        "baseline": 1, "prompt_variants": 5, "unified_prompt": 1, "current_price": 4,
        "replications": 1, "model": 1, "temperature": 2,
    }


# -- time series -------------------------------------------------------------


def _ts(tmp_path, rows, **kwargs):
    path = write_prices(tmp_path / "prices.csv", rows)
    cfg = AgentBackendConfig(backend_kind=BackendKind.ORACLE)
    spec = TimeSeriesSpec(str(path), **kwargs)
    return run_timeseries(spec, default_run(spec, cfg, n=3), cfg, tmp_path / "out")


def test_timeseries_price_at_fundamental(tmp_path):
    rows = [(m, 1000, 40) for m in months((2000, 1), 30)]
    result = _ts(tmp_path, rows, gordon_growth=0.0, gordon_discount=0.04)
    assert len(result.rows) == 29
    assert all(r.fundamental == 1000 and r.mean_w_fund == 0.9 for r in result.rows)
    assert all(r.forecast_error == 0 for r in result.rows[:-1])
    assert result.rows[-1].forecast_error is None


def test_timeseries_price_below_fundamental(tmp_path):
    rows = [(m, 900, 40) for m in months((2000, 1), 20)]
    result = _ts(tmp_path, rows, gordon_growth=0.0, gordon_discount=0.04)
    for r in result.rows[:-1]:
        assert r.forecast_error > 0
        assert r.expected_price == pytest.approx(0.9 * 995 + 0.1 * 900, rel=1e-12)


def test_timeseries_moving_average_edges(tmp_path):
    prices = [1000 + 30 * math.sin(k / 3) for k in range(41)]
    rows = [(m, p, 40) for m, p in zip(months((1990, 1), 41), prices)]
    result = _ts(tmp_path, rows, gordon_growth=0.0, gordon_discount=0.04)
    ma = [r.w_fund_ma13 for r in result.rows]
    assert len(ma) == 40
    assert ma[:6] == [None] * 6 and ma[-6:] == [None] * 6
    assert all(v is not None for v in ma[6:-6])
    assert ma == centered_moving_average([r.mean_w_fund for r in result.rows], 13)


def test_timeseries_date_range(tmp_path):
    rows = [(m, 1000, 40) for m in months((2000, 1), 24)]
    result = _ts(tmp_path, rows, start="2000-06", end="2001-03", gordon_growth=0.0, gordon_discount=0.04)
    assert result.rows[0].date == dt.date(2000, 6, 1) and result.rows[-1].date == dt.date(2001, 3, 1)
    assert any("moving average" in w for w in result.warnings)


def test_timeseries_outputs_round_trip(tmp_path):
    rows = [(m, 950 + k, 40) for k, m in enumerate(months((2000, 1), 15))]
    result = _ts(tmp_path, rows, gordon_growth=0.0, gordon_discount=0.04)
    path = write_timeseries_outputs(result, tmp_path / "written")
    assert read_timeseries_table(path) == result.rows


def test_data_gap_names_month(tmp_path):
    rows = [("2001-01", 1000, 40), ("2001-02", 1000, 40), ("2001-04", 1000, 40)]
    with pytest.raises(DataError) as info:
        load_price_csv(write_prices(tmp_path / "p.csv", rows))
    assert info.value.code == "DATA_GAP" and "2001-03" in str(info.value)


@pytest.mark.parametrize(
    "rows",
    [
        [("2001-02", 1000, 40), ("2001-01", 1000, 40)],
        [("2001/01", 1000, 40)],
        [("2001-01", "abc", 40)],
        [],
    ],
)
def test_bad_price_files(tmp_path, rows):
    with pytest.raises(DataError) as info:
        load_price_csv(write_prices(tmp_path / "p.csv", rows))
    assert info.value.code == "BAD_INPUT"


def test_bad_header(tmp_path):
    path = tmp_path / "p.csv"
    path.write_text("month,close,div\n2001-01,1,1\n")
    with pytest.raises(DataError):
        load_price_csv(path)


def test_range_outside_data(tmp_path):
    rows = [(m, 1000, 40) for m in months((2000, 1), 5)]
    with pytest.raises(DataError):
        _ts(tmp_path, rows, start="1999-01", gordon_growth=0.0, gordon_discount=0.04)
