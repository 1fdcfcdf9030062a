"""Two-type heterogeneous agent model: expectation rules, aggregation and
parameter extraction.

Everything here is a pure function of its arguments. Prices are plain floats
in index points. ``None`` stands for an UNDEFINED reaction parameter (singular
denominator) or a MISSING moving-average position.
"""

from __future__ import annotations

import datetime as dt
import math
from dataclasses import dataclass
from typing import Optional, Sequence

#: Denominators smaller than this (in index points) make alpha/beta UNDEFINED.
EPSILON_DENOMINATOR = 1e-6
WEIGHT_SUM_TOL = 1e-9


def _finite(name: str, value: float) -> float:
    value = float(value)
    if not math.isfinite(value):
        raise ValueError(f"{name} must be finite, got {value!r}")
    return value


@dataclass(frozen=True)
class MarketSnapshot:
    """Current price, previous price and fundamental shown to the agent."""

    p_t: float
    p_prev: float
    p_fund: float

    def __post_init__(self) -> None:
        for name in ("p_t", "p_prev", "p_fund"):
            value = _finite(name, getattr(self, name))
            if value <= 0:
                raise ValueError(f"{name} must be strictly positive, got {value!r}")
            object.__setattr__(self, name, value)

    @property
    def gap(self) -> float:
        """Fundamental minus current price."""
        return self.p_fund - self.p_t

    @property
    def trend(self) -> float:
        """Current minus previous price."""
        return self.p_t - self.p_prev


@dataclass(frozen=True)
class StrategyWeights:
    w_fund: float
    w_trend: float

    def __post_init__(self) -> None:
        for name in ("w_fund", "w_trend"):
            value = _finite(name, getattr(self, name))
            if not 0.0 <= value <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {value!r}")
            object.__setattr__(self, name, value)
        if abs(self.w_fund + self.w_trend - 1.0) > WEIGHT_SUM_TOL:
            raise ValueError(f"weights must sum to 1, got {self.w_fund + self.w_trend!r}")

    @classmethod
    def from_fund(cls, w_fund: float) -> "StrategyWeights":
        return cls(w_fund, 1.0 - w_fund)


@dataclass(frozen=True)
class ExpectationPair:
    e_fund: float
    e_trend: float

    def __post_init__(self) -> None:
        for name in ("e_fund", "e_trend"):
            value = _finite(name, getattr(self, name))
            if value <= 0:
                raise ValueError(f"{name} must be strictly positive, got {value!r}")
            object.__setattr__(self, name, value)


@dataclass(frozen=True)
class ReactionParams:
    alpha: Optional[float]
    beta: Optional[float]

    def __post_init__(self) -> None:
        for name in ("alpha", "beta"):
            value = getattr(self, name)
            if value is not None:
                object.__setattr__(self, name, _finite(name, value))

    @property
    def defined(self) -> bool:
        return self.alpha is not None and self.beta is not None


@dataclass(frozen=True)
class DividendRecord:
    """One month of index data. ``dividend`` is the trailing twelve-month dividend."""

    date: dt.date
    price: float
    dividend: float

    def __post_init__(self) -> None:
        price = _finite("price", self.price)
        dividend = _finite("dividend", self.dividend)
        if price <= 0:
            raise ValueError(f"price must be positive, got {price!r}")
        if dividend < 0:
            raise ValueError(f"dividend must be non-negative, got {dividend!r}")
        object.__setattr__(self, "price", price)
        object.__setattr__(self, "dividend", dividend)


def fundamentalist_expectation(snapshot: MarketSnapshot, alpha: float) -> float:
    alpha = _finite("alpha", alpha)
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must lie in [0, 1], got {alpha!r}")
    return snapshot.p_t + alpha * (snapshot.p_fund - snapshot.p_t)


def trend_follower_expectation(snapshot: MarketSnapshot, beta: float) -> float:
    # negative beta is a contrarian
    beta = _finite("beta", beta)
    return snapshot.p_t + beta * (snapshot.p_t - snapshot.p_prev)


def aggregate_expected_price(weights: StrategyWeights, expectations: ExpectationPair) -> float:
    """Market expectation as the convex combination of the two group forecasts.

    The trend weight is ``1 - w_fund``, so the two shares sum to one.
    """
    w = weights.w_fund
    return w * expectations.e_fund + (1.0 - w) * expectations.e_trend


def _check_delta(delta: float) -> float:
    delta = _finite("delta", delta)
    if not 0.0 <= delta <= 1.0:
        raise ValueError(f"delta must lie in [0, 1], got {delta!r}")
    return delta


def reduced_form_next_price(
    snapshot: MarketSnapshot, delta: float, alpha: float, beta: float
) -> float:
    delta = _check_delta(delta)
    alpha = _finite("alpha", alpha)
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must lie in [0, 1], got {alpha!r}")
    beta = _finite("beta", beta)
    return _next_price(snapshot, delta, alpha, beta)


def _next_price(snapshot: MarketSnapshot, delta: float, alpha: float, beta: float) -> float:
    return (
        snapshot.p_t
        + delta * alpha * (snapshot.p_fund - snapshot.p_t)
        + (1.0 - delta) * beta * (snapshot.p_t - snapshot.p_prev)
    )


def extract_alpha(e_fund: float, snapshot: MarketSnapshot) -> Optional[float]:
    """Invert the fundamentalist rule. ``None`` when the price sits on the fundamental."""
    e_fund = _finite("e_fund", e_fund)
    denom = snapshot.p_fund - snapshot.p_t
    if abs(denom) < EPSILON_DENOMINATOR:
        return None
    return (e_fund - snapshot.p_t) / denom


def extract_beta(e_trend: float, snapshot: MarketSnapshot) -> Optional[float]:
    """Invert the trend rule. ``None`` when there is no last-period move."""
    e_trend = _finite("e_trend", e_trend)
    denom = snapshot.p_t - snapshot.p_prev
    if abs(denom) < EPSILON_DENOMINATOR:
        return None
    return (e_trend - snapshot.p_t) / denom


def expected_price_variation(
    delta: float, params: ReactionParams, snapshot: MarketSnapshot
) -> float:
    """One-period expected price change implied by composition and reaction parameters.

    Equal to ``reduced_form_next_price(...) - snapshot.p_t``. Alpha is not range
    checked here because averaged LLM replies may leave [0, 1].
    """
    if not params.defined:
        raise ValueError("expected price variation needs defined alpha and beta")
    delta = _check_delta(delta)
    # computed through the next price so the identity with it holds bit for bit
    return _next_price(snapshot, delta, params.alpha, params.beta) - snapshot.p_t  # type: ignore[arg-type]


def gordon_fundamental(record: DividendRecord, growth_rate: float, discount_rate: float) -> float:
    growth_rate = _finite("growth_rate", growth_rate)
    discount_rate = _finite("discount_rate", discount_rate)
    if growth_rate < 0:
        raise ValueError(f"growth_rate must be >= 0, got {growth_rate!r}")
    if discount_rate <= growth_rate:
        raise ValueError(
            f"discount_rate ({discount_rate!r}) must exceed growth_rate ({growth_rate!r})"
        )
    return record.dividend * (1.0 + growth_rate) / (discount_rate - growth_rate)


def calibrate_discount_rate(records: Sequence[DividendRecord], growth_rate: float) -> float:
    """Discount rate making the sample-mean fundamental equal the sample-mean price."""
    if not records:
        raise ValueError("cannot calibrate on an empty sample")
    mean_div = math.fsum(r.dividend for r in records) / len(records)
    mean_price = math.fsum(r.price for r in records) / len(records)
    if mean_div <= 0:
        raise ValueError("calibration needs a positive mean dividend")
    return growth_rate + (1.0 + growth_rate) * mean_div / mean_price


def centered_moving_average(
    series: Sequence[Optional[float]], window: int = 13
) -> list[Optional[float]]:
    """Centered rolling mean; the ``(window - 1) // 2`` positions at each edge are None.

    A window containing a None yields None.
    """
    if window <= 0 or window % 2 == 0:
        raise ValueError(f"window must be a positive odd integer, got {window!r}")
    n = len(series)
    if window > n:
        raise ValueError(f"window {window} is longer than the series ({n})")
    half = (window - 1) // 2
    out: list[Optional[float]] = [None] * n
    for i in range(half, n - half):
        chunk = series[i - half : i + half + 1]
        if any(v is None for v in chunk):
            continue
        out[i] = math.fsum(chunk) / window  # type: ignore[arg-type]
    return out


def forecast_error(expected_next: float, realized_next: float) -> float:
    return _finite("expected_next", expected_next) - _finite("realized_next", realized_next)
