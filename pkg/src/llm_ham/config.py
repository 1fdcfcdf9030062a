"""Run configuration: an INI-style ``key = value`` file with sections.

Example::

    [backend]
    kind = oracle            ; oracle | replay | remote
    model = gpt-4o-mini
    temperature = 1
    api_key_env = OPENAI_API_KEY

    [run]
    reps = 50
    variant = COMPOSITION_V0
    out = results/grid

    [grid]
    p_t = 1333

    [timeseries]
    input = data/sp500_monthly.csv
    start = 1990-01
    end = 2020-12

    [matrix]
    kind = grid
    temperatures = 0.4, 0.7, 1

Command-line flags override file values.
"""

from __future__ import annotations

import configparser
import dataclasses
import enum
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from .backends import DEFAULT_ENDPOINT, AgentBackendConfig, BackendKind
from .experiments import GridSpec, RobustnessMatrix, TimeSeriesSpec
from .prompts import VariantId
from .replication import ParamMode


class Experiment(str, enum.Enum):
    GRID = "GRID"
    TIMESERIES = "TIMESERIES"
    MATRIX = "MATRIX"


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    experiment: Experiment
    backend: AgentBackendConfig = field(default_factory=AgentBackendConfig)
    grid: GridSpec = field(default_factory=GridSpec)
    timeseries: Optional[TimeSeriesSpec] = None
    matrix: RobustnessMatrix = field(default_factory=RobustnessMatrix)
    matrix_kind: str = "grid"
    out_dir: Path = Path("results")
    reps: int = 50
    variant: VariantId = VariantId.COMPOSITION_V0
    param_mode: ParamMode = ParamMode.PER_REPLICATION
    variation_mode: str = "means"
    calibrate: bool = False
    render: bool = True


def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(t) for t in text.replace(";", ",").split(",") if t.strip())


def _strs(text: str) -> tuple[str, ...]:
    return tuple(t.strip() for t in text.replace(";", ",").split(",") if t.strip())


def read_config_file(path: str | Path) -> dict[str, dict[str, str]]:
    parser = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    try:
        with open(path, encoding="utf-8") as fh:
            parser.read_file(fh)
    except (OSError, configparser.Error) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return {s: dict(parser[s]) for s in parser.sections()}


def build_config(experiment: Experiment, sections: dict[str, dict[str, str]]) -> RunConfig:
    """Turn parsed sections (already merged with CLI overrides) into a RunConfig."""
    try:
        return _build(experiment, sections)
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(str(exc)) from exc


def _build(experiment: Experiment, sections: dict[str, dict[str, str]]) -> RunConfig:
    b = sections.get("backend", {})
    kind = BackendKind(b.get("kind", "oracle").upper())
    backend = AgentBackendConfig(
        backend_kind=kind,
        model_name=b.get("model", "gpt-4o-mini"),
        temperature=float(b.get("temperature", 1.0)),
        endpoint_url=b.get("endpoint_url") or (DEFAULT_ENDPOINT if kind is BackendKind.REMOTE else None),
        api_key_ref=b.get("api_key_env") or ("OPENAI_API_KEY" if kind is BackendKind.REMOTE else None),
        timeout=float(b.get("timeout", 60.0)),
        max_retries=int(b.get("max_retries", 5)),
        max_in_flight=int(b.get("max_in_flight", 4)),
        replay_path=b.get("replay_path") or None,
    )
    g = sections.get("grid", {})
    grid_fields = {f.name for f in dataclasses.fields(GridSpec)}
    grid = GridSpec(**{k: float(v) for k, v in g.items() if k in grid_fields})

    ts = sections.get("timeseries", {})
    timeseries = None
    if ts.get("input"):
        timeseries = TimeSeriesSpec(
            input_path=ts["input"],
            start=ts.get("start") or None,
            end=ts.get("end") or None,
            gordon_growth=float(ts.get("growth", TimeSeriesSpec.gordon_growth)),
            gordon_discount=float(ts.get("discount", TimeSeriesSpec.gordon_discount)),
            ma_window=int(ts.get("ma_window", 13)),
        )

    m = sections.get("matrix", {})
    defaults = RobustnessMatrix()
    matrix = RobustnessMatrix(
        temperatures=_floats(m["temperatures"]) if m.get("temperatures") else defaults.temperatures,
        models=_strs(m["models"]) if m.get("models") else defaults.models,
        p_t_levels=_floats(m["p_t_levels"]) if m.get("p_t_levels") else defaults.p_t_levels,
        prompt_variants=tuple(VariantId(v) for v in _strs(m["variants"])) if m.get("variants") else defaults.prompt_variants,
        replication_counts=tuple(int(x) for x in _floats(m["replication_counts"])) if m.get("replication_counts") else defaults.replication_counts,
    )
    r = sections.get("run", {})
    return RunConfig(
        experiment=experiment,
        backend=backend,
        grid=grid,
        timeseries=timeseries,
        matrix=matrix,
        matrix_kind=m.get("kind", "grid").lower(),
        out_dir=Path(r.get("out", "results")),
        reps=int(r.get("reps", 50)),
        variant=VariantId(r.get("variant", "COMPOSITION_V0")),
        param_mode=ParamMode(r.get("param_mode", "per_replication")),
        variation_mode=r.get("variation_mode", "means"),
        calibrate=ts.get("calibrate", "false").lower() in ("1", "true", "yes"),
        render=r.get("render", "true").lower() in ("1", "true", "yes"),
    )
