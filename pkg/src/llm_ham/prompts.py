"""Prompt catalog, snapshot rendering and strict reply parsing.

Template texts live next to this module as one UTF-8 file per variant, with a
sha256 manifest in ``digests.json``.
"""

from __future__ import annotations

import enum
import hashlib
import json
import math
import re
from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources
from typing import Optional

from .ham_core import ExpectationPair, MarketSnapshot, StrategyWeights


class ReplySchema(str, enum.Enum):
    TWO_WEIGHTS = "TWO_WEIGHTS"
    TWO_PRICES = "TWO_PRICES"
    WEIGHTS_AND_PRICES_QUOTED = "WEIGHTS_AND_PRICES_QUOTED"


class VariantId(str, enum.Enum):
    COMPOSITION_V0 = "COMPOSITION_V0"
    EXPECTATION_V0 = "EXPECTATION_V0"
    UNIFIED = "UNIFIED"
    COMPOSITION_V1 = "COMPOSITION_V1"
    COMPOSITION_V2 = "COMPOSITION_V2"
    COMPOSITION_V3 = "COMPOSITION_V3"
    COMPOSITION_V4 = "COMPOSITION_V4"
    COMPOSITION_V5 = "COMPOSITION_V5"

    @property
    def schema(self) -> ReplySchema:
        if self is VariantId.EXPECTATION_V0:
            return ReplySchema.TWO_PRICES
        if self is VariantId.UNIFIED:
            return ReplySchema.WEIGHTS_AND_PRICES_QUOTED
        return ReplySchema.TWO_WEIGHTS


class ParseStatus(str, enum.Enum):
    OK = "OK"
    MALFORMED = "MALFORMED"
    SUM_VIOLATION = "SUM_VIOLATION"
    RANGE_VIOLATION = "RANGE_VIOLATION"
    NONPOSITIVE = "NONPOSITIVE"
    LINE_VIOLATION = "LINE_VIOLATION"
    TRANSPORT_FAILED = "TRANSPORT_FAILED"


class ParseError(ValueError):
    def __init__(self, status: ParseStatus, message: str):
        super().__init__(f"{status.value}: {message}")
        self.status = status


@dataclass(frozen=True)
class PromptVariant:
    id: VariantId
    template_text: str

    @property
    def reply_schema(self) -> ReplySchema:
        return self.id.schema


@lru_cache(maxsize=None)
def _read_template(variant_id: VariantId) -> str:
    path = resources.files(__package__).joinpath("prompts", f"{variant_id.value}.txt")
    return path.read_bytes().decode("utf-8")


def get_variant(variant_id: VariantId | str) -> PromptVariant:
    vid = VariantId(variant_id)
    return PromptVariant(vid, _read_template(vid))


def canonical_digests() -> dict[str, str]:
    path = resources.files(__package__).joinpath("prompts", "digests.json")
    return json.loads(path.read_text(encoding="utf-8"))


def template_digest(variant_id: VariantId | str) -> str:
    return hashlib.sha256(get_variant(variant_id).template_text.encode("utf-8")).hexdigest()


# -- rendering ---------------------------------------------------------------


@dataclass(frozen=True)
class ValueFormat:
    decimals: int = 2
    labels: tuple[str, str, str] = ("current price", "previous price", "fundamental")


DEFAULT_FORMAT = ValueFormat()


def format_value(x: float, decimals: int = 2) -> str:
    """Integral values without a decimal point, others with up to ``decimals`` places."""
    if float(x).is_integer():
        return str(int(x))
    text = f"{x:.{decimals}f}"
    if "." in text:
        text = text.rstrip("0").rstrip(".")
    return text


@dataclass(frozen=True)
class RenderedPrompt:
    variant_id: VariantId
    body: str
    snapshot: MarketSnapshot


def render(
    variant: PromptVariant | VariantId | str,
    snapshot: MarketSnapshot,
    value_format: ValueFormat = DEFAULT_FORMAT,
) -> RenderedPrompt:
    if not isinstance(variant, PromptVariant):
        variant = get_variant(variant)
    values = (snapshot.p_t, snapshot.p_prev, snapshot.p_fund)
    lines = [
        f"{label}: {format_value(v, value_format.decimals)}"
        for label, v in zip(value_format.labels, values)
    ]
    body = variant.template_text + "\n\n" + "\n".join(lines)
    return RenderedPrompt(variant.id, body, snapshot)


# -- parsing -----------------------------------------------------------------

_NUMBER = re.compile(r"[+-]?(?:\d+(?:\.\d*)?|\.\d+)")
_QUOTES = "\"'“”‘’"

WEIGHT_SUM_MIN, WEIGHT_SUM_MAX = 0.98, 1.02
_SLACK = 1e-12  # keeps decimal boundary sums such as 0.5 + 0.52 inside
WEIGHT_RAW_MIN, WEIGHT_RAW_MAX = -0.01, 1.01


def _numbers(raw: str, count: int) -> list[float]:
    text = raw.strip()
    if text.endswith("."):
        text = text[:-1]
    tokens = text.split(",")
    if len(tokens) != count:
        raise ParseError(ParseStatus.MALFORMED, f"expected {count} comma-separated values")
    values = []
    for token in tokens:
        token = token.strip()
        if len(token) >= 2 and token[0] in _QUOTES and token[-1] in _QUOTES:
            token = token[1:-1].strip()
        if not _NUMBER.fullmatch(token):
            raise ParseError(ParseStatus.MALFORMED, f"not a decimal number: {token[:40]!r}")
        value = float(token)
        if not math.isfinite(value):
            raise ParseError(ParseStatus.MALFORMED, "number overflows a double")
        values.append(value)
    return values


def _weights(w_fund: float, w_trend: float) -> StrategyWeights:
    for w in (w_fund, w_trend):
        if not WEIGHT_RAW_MIN <= w <= WEIGHT_RAW_MAX:
            raise ParseError(ParseStatus.RANGE_VIOLATION, f"weight {w!r} outside [0, 1]")
    total = w_fund + w_trend
    if not WEIGHT_SUM_MIN - _SLACK <= total <= WEIGHT_SUM_MAX + _SLACK:
        raise ParseError(ParseStatus.SUM_VIOLATION, f"weights sum to {total!r}")
    w_fund, w_trend = w_fund / total, w_trend / total
    # a slightly negative weight survives the raw bound but not renormalisation
    if not (0.0 <= w_fund <= 1.0 and 0.0 <= w_trend <= 1.0):
        raise ParseError(ParseStatus.RANGE_VIOLATION, "renormalised weight outside [0, 1]")
    return StrategyWeights(w_fund, w_trend)


def _prices(e_fund: float, e_trend: float) -> ExpectationPair:
    if e_fund <= 0 or e_trend <= 0:
        raise ParseError(ParseStatus.NONPOSITIVE, f"non-positive price in ({e_fund!r}, {e_trend!r})")
    return ExpectationPair(e_fund, e_trend)


def parse_weights(raw: str) -> StrategyWeights:
    """Parse ``"w_fund, w_trend"``; sums within 0.02 of one are renormalised."""
    return _weights(*_numbers(raw, 2))


def parse_expectations(raw: str) -> ExpectationPair:
    """Parse ``"e_fund, e_trend"`` (fundamentalist forecast first)."""
    return _prices(*_numbers(raw, 2))


def parse_unified(raw: str) -> tuple[StrategyWeights, ExpectationPair]:
    """Parse the single-line four-value reply ``"w_f", "w_t", "e_f", "e_t"``."""
    text = raw.strip()
    if "\n" in text or "\r" in text:
        raise ParseError(ParseStatus.LINE_VIOLATION, "reply spans more than one line")
    w_f, w_t, e_f, e_t = _numbers(text, 4)
    return _weights(w_f, w_t), _prices(e_f, e_t)


@dataclass(frozen=True)
class ParsedReply:
    kind: ReplySchema
    raw_text: str
    weights: Optional[StrategyWeights] = field(default=None)
    expectations: Optional[ExpectationPair] = field(default=None)


def parse_reply(schema: ReplySchema, raw: str) -> ParsedReply:
    """Dispatch on the reply schema; raises ParseError on any rejection."""
    if schema is ReplySchema.TWO_WEIGHTS:
        return ParsedReply(schema, raw, weights=parse_weights(raw))
    if schema is ReplySchema.TWO_PRICES:
        return ParsedReply(schema, raw, expectations=parse_expectations(raw))
    weights, expectations = parse_unified(raw)
    return ParsedReply(schema, raw, weights=weights, expectations=expectations)
