"""Generative-agent backends: remote chat completions, a deterministic oracle
and a replay store of recorded transcripts."""

from __future__ import annotations

import enum
import json
import logging
import os
import random
import threading
import time
from collections import defaultdict
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable, Optional, Protocol

import httpx

from .ham_core import (
    ExpectationPair,
    MarketSnapshot,
    StrategyWeights,
    fundamentalist_expectation,
    trend_follower_expectation,
)
from .prompts import RenderedPrompt, ReplySchema, VariantId

logger = logging.getLogger(__name__)

DEFAULT_ENDPOINT = "https://api.openai.com/v1/chat/completions"
DEFAULT_MODEL = "gpt-4o-mini"
BACKOFF_BASE = 1.0
BACKOFF_FACTOR = 2.0


class BackendKind(str, enum.Enum):
    REMOTE = "REMOTE"
    ORACLE = "ORACLE"
    REPLAY = "REPLAY"


class BackendErrorCode(str, enum.Enum):
    TRANSPORT_EXHAUSTED = "TRANSPORT_EXHAUSTED"
    AUTH_FAILED = "AUTH_FAILED"
    REPLAY_MISS = "REPLAY_MISS"
    TIMEOUT = "TIMEOUT"


class BackendError(RuntimeError):
    def __init__(self, code: BackendErrorCode, message: str, attempts: int = 0):
        super().__init__(f"{code.value}: {message}")
        self.code = code
        self.message = message
        self.attempts = attempts


@dataclass(frozen=True)
class AgentBackendConfig:
    backend_kind: BackendKind = BackendKind.ORACLE
    model_name: str = DEFAULT_MODEL
    temperature: float = 1.0
    endpoint_url: Optional[str] = None
    api_key_ref: Optional[str] = None
    timeout: float = 60.0
    max_retries: int = 5
    max_in_flight: int = 4
    replay_path: Optional[str] = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "backend_kind", BackendKind(self.backend_kind))
        if not 0.0 <= self.temperature <= 2.0:
            raise ValueError(f"temperature must lie in [0, 2], got {self.temperature!r}")
        if not 0 <= self.max_retries <= 10:
            raise ValueError(f"max_retries must lie in [0, 10], got {self.max_retries!r}")
        if self.max_in_flight < 1:
            raise ValueError("max_in_flight must be >= 1")
        if self.timeout <= 0:
            raise ValueError("timeout must be positive")
        if self.backend_kind is BackendKind.REMOTE and not (self.endpoint_url and self.api_key_ref):
            raise ValueError("REMOTE backend needs endpoint_url and api_key_ref")

    @classmethod
    def remote(cls, **kwargs) -> "AgentBackendConfig":
        kwargs.setdefault("endpoint_url", DEFAULT_ENDPOINT)
        kwargs.setdefault("api_key_ref", "OPENAI_API_KEY")
        return cls(backend_kind=BackendKind.REMOTE, **kwargs)


@dataclass(frozen=True)
class AgentReply:
    raw_text: str
    latency: float
    attempt_count: int
    backend_kind: BackendKind


class Backend(Protocol):
    config: AgentBackendConfig

    def complete(self, prompt: RenderedPrompt) -> AgentReply: ...


# -- oracle ------------------------------------------------------------------

ORACLE_ALPHA = 0.95
ORACLE_BETA = 0.5


def oracle_composition(snapshot: MarketSnapshot) -> StrategyWeights:
    """Deterministic stand-in for the composition prompt.

    Fundamentalists dominate at or below the fundamental. Above it, a downtrend
    tips the balance to trend followers, while an uptrend keeps fundamentalists
    ahead by an amount growing with the mispricing (saturating at 600 points).
    """
    g = snapshot.p_fund - snapshot.p_t
    d = snapshot.p_t - snapshot.p_prev
    if g >= 0:
        w = 0.9
    elif d < 0:
        w = 0.35
    else:
        w = 0.5 + 0.4 * min(1.0, abs(g) / 600.0)
    return StrategyWeights.from_fund(w)


def oracle_expectations(snapshot: MarketSnapshot) -> ExpectationPair:
    e_fund = fundamentalist_expectation(snapshot, ORACLE_ALPHA)
    contrarian = snapshot.p_fund >= snapshot.p_t and snapshot.p_t < snapshot.p_prev
    beta = -ORACLE_BETA if contrarian else ORACLE_BETA
    return ExpectationPair(e_fund, trend_follower_expectation(snapshot, beta))


def _fmt_weight(w: float) -> str:
    if abs(w * 100 - round(w * 100)) < 1e-9:
        return f"{w:.2f}"
    return repr(w)


def _fmt_price(x: float) -> str:
    return str(int(x)) if x.is_integer() else repr(x)


def oracle_reply_text(schema: ReplySchema, snapshot: MarketSnapshot) -> str:
    if schema is ReplySchema.TWO_WEIGHTS:
        w = oracle_composition(snapshot)
        return f"{_fmt_weight(w.w_fund)}, {_fmt_weight(w.w_trend)}"
    if schema is ReplySchema.TWO_PRICES:
        e = oracle_expectations(snapshot)
        return f"{_fmt_price(e.e_fund)}, {_fmt_price(e.e_trend)}"
    w = oracle_composition(snapshot)
    e = oracle_expectations(snapshot)
    values = (_fmt_weight(w.w_fund), _fmt_weight(w.w_trend), _fmt_price(e.e_fund), _fmt_price(e.e_trend))
    return ", ".join(f'"{v}"' for v in values)


class OracleBackend:
    def __init__(self, config: AgentBackendConfig):
        self.config = config

    def complete(self, prompt: RenderedPrompt) -> AgentReply:
        text = oracle_reply_text(VariantId(prompt.variant_id).schema, prompt.snapshot)
        return AgentReply(text, 0.0, 1, BackendKind.ORACLE)


# -- replay ------------------------------------------------------------------


def replay_key(variant_id: str, snapshot: MarketSnapshot) -> tuple:
    return (VariantId(variant_id).value, snapshot.p_t, snapshot.p_prev, snapshot.p_fund)


def _iter_jsonl(paths: Iterable[Path]):
    for path in paths:
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, 1):
                if not line.strip():
                    continue
                try:
                    yield json.loads(line)
                except json.JSONDecodeError:
                    logger.warning("skipping corrupt replay line %s:%d", path, lineno)


class ReplayBackend:
    """Serves stored replies in replication order, one cursor per (variant, snapshot)."""

    def __init__(self, config: AgentBackendConfig, records: Optional[Iterable[dict]] = None):
        self.config = config
        if records is None:
            records = self._load(config.replay_path)
        entries: dict[tuple, list[tuple[int, str]]] = defaultdict(list)
        for rec in records:
            if rec.get("parse_status") == "TRANSPORT_FAILED":
                continue
            try:
                snap = MarketSnapshot(rec["p_t"], rec["p_prev"], rec["p_fund"])
                key = replay_key(rec["variant_id"], snap)
                entries[key].append((int(rec.get("replication_index", 0)), rec["raw_text"]))
            except (KeyError, TypeError, ValueError):
                continue
        self._entries = {k: [text for _, text in sorted(v, key=lambda t: t[0])] for k, v in entries.items()}
        self._cursor: dict[tuple, int] = defaultdict(int)
        self._lock = threading.Lock()

    @staticmethod
    def _load(path: Optional[str]) -> list[dict]:
        if path is None:
            return []
        p = Path(path)
        if not p.exists():
            return []
        files = sorted(p.glob("*.jsonl")) if p.is_dir() else [p]
        return list(_iter_jsonl(files))

    def complete(self, prompt: RenderedPrompt) -> AgentReply:
        key = replay_key(prompt.variant_id, prompt.snapshot)
        with self._lock:
            stored = self._entries.get(key, [])
            i = self._cursor[key]
            if i >= len(stored):
                raise BackendError(BackendErrorCode.REPLAY_MISS, f"no stored reply #{i} for {key}")
            self._cursor[key] = i + 1
        return AgentReply(stored[i], 0.0, 1, BackendKind.REPLAY)


# -- remote ------------------------------------------------------------------


class _Retryable(Exception):
    def __init__(self, reason: str, timeout: bool = False):
        super().__init__(reason)
        self.timeout = timeout


class RemoteBackend:
    """Chat-completions client with bounded concurrency and full-jitter backoff.

    Each request carries exactly one user message. The API key is read from
    the environment variable named by ``api_key_ref`` at call time and is
    never stored on the instance.
    """

    def __init__(
        self,
        config: AgentBackendConfig,
        transport: Optional[httpx.BaseTransport] = None,
        sleep: Callable[[float], None] = time.sleep,
        rng: Optional[random.Random] = None,
    ):
        if config.backend_kind is not BackendKind.REMOTE:
            raise ValueError("RemoteBackend needs a REMOTE config")
        self.config = config
        self._client = httpx.Client(transport=transport, timeout=config.timeout)
        self._sleep = sleep
        self._rng = rng or random.Random()
        self._slots = threading.BoundedSemaphore(config.max_in_flight)

    def close(self) -> None:
        self._client.close()

    def payload(self, prompt: RenderedPrompt) -> dict:
        return {
            "model": self.config.model_name,
            "temperature": self.config.temperature,
            "messages": [{"role": "user", "content": prompt.body}],
        }

    def backoff_delay(self, attempt: int) -> float:
        """Full jitter: uniform on [0, base * factor**attempt]."""
        return self._rng.uniform(0.0, BACKOFF_BASE * BACKOFF_FACTOR**attempt)

    def _api_key(self) -> str:
        key = os.environ.get(self.config.api_key_ref or "")
        if not key:
            raise BackendError(
                BackendErrorCode.AUTH_FAILED,
                f"environment variable {self.config.api_key_ref} is not set",
            )
        return key

    def _attempt(self, payload: dict, headers: dict) -> str:
        try:
            with self._slots:
                resp = self._client.post(self.config.endpoint_url, json=payload, headers=headers)  # type: ignore[arg-type]
        except httpx.TimeoutException as exc:
            raise _Retryable(f"timeout: {exc}", timeout=True) from exc
        except httpx.TransportError as exc:
            raise _Retryable(f"transport: {exc}") from exc
        if resp.status_code in (401, 403):
            raise BackendError(BackendErrorCode.AUTH_FAILED, f"HTTP {resp.status_code}")
        if resp.status_code == 429 or resp.status_code >= 500:
            raise _Retryable(f"HTTP {resp.status_code}")
        if resp.status_code >= 400:
            raise _Retryable(f"HTTP {resp.status_code}: {resp.text[:200]}")
        try:
            content = resp.json()["choices"][0]["message"]["content"]
        except (ValueError, KeyError, IndexError, TypeError) as exc:
            raise _Retryable(f"unexpected response body: {exc}") from exc
        return content if isinstance(content, str) else ""

    def complete(self, prompt: RenderedPrompt) -> AgentReply:
        headers = {"Authorization": f"Bearer {self._api_key()}"}
        payload = self.payload(prompt)
        start = time.monotonic()
        last: Optional[_Retryable] = None
        attempts = self.config.max_retries + 1
        for attempt in range(attempts):
            if attempt:
                self._sleep(self.backoff_delay(attempt - 1))
            try:
                text = self._attempt(payload, headers)
            except _Retryable as exc:
                last = exc
                logger.warning("attempt %d/%d failed: %s", attempt + 1, attempts, exc)
                continue
            return AgentReply(text, time.monotonic() - start, attempt + 1, BackendKind.REMOTE)
        assert last is not None
        code = BackendErrorCode.TIMEOUT if last.timeout else BackendErrorCode.TRANSPORT_EXHAUSTED
        raise BackendError(code, f"gave up after {attempts} attempts: {last}", attempts)


def make_backend(config: AgentBackendConfig, **kwargs) -> Backend:
    if config.backend_kind is BackendKind.ORACLE:
        return OracleBackend(config)
    if config.backend_kind is BackendKind.REPLAY:
        return ReplayBackend(config, **kwargs)
    return RemoteBackend(config, **kwargs)


def complete(config: AgentBackendConfig, prompt: RenderedPrompt) -> AgentReply:
    """One-shot completion; builds a throwaway backend (a REPLAY cursor starts at zero)."""
    backend = make_backend(config)
    try:
        return backend.complete(prompt)
    finally:
        if isinstance(backend, RemoteBackend):
            backend.close()
