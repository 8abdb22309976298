"""Forecast-driven grid services: swing thresholds, swing detection and
direct-load-control peak shaving."""
from __future__ import annotations

import enum
import math
from collections import Counter
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .data.series import DAY, STEPS_PER_DAY, TimeSeries, as_minute, slot_of_day
from .errors import EmptyInputError, InsufficientHorizonError, InvalidParameterError


class Quantity(str, enum.Enum):
    DELTA_P = "delta_p"
    ABSOLUTE_POWER = "absolute_power"


@dataclass(frozen=True)
class SingleDay:
    """The 24 hours starting at ``day`` on one node (index into the series list)."""

    day: np.datetime64
    node: int = 0


@dataclass(frozen=True)
class Horizon:
    """All (or the listed) nodes over ``[start, end)``; open ends mean the full span."""

    start: np.datetime64 | None = None
    end: np.datetime64 | None = None
    nodes: tuple[int, ...] | None = None


@dataclass(frozen=True)
class ThresholdPolicy:
    percentile: float = 90.0
    window: SingleDay | Horizon = Horizon()
    quantity: Quantity = Quantity.DELTA_P
    absolute_delta: bool = False

    def __post_init__(self):
        if not 0 < self.percentile <= 100:
            raise InvalidParameterError("percentile must lie in (0, 100]")
        object.__setattr__(self, "quantity", Quantity(self.quantity))


def nearest_rank(values, percentile: float) -> float:
    """Smallest observation with at least ``percentile`` % of the data at or below it."""
    v = np.sort(np.asarray(values, dtype=np.float64))
    if v.size == 0:
        raise EmptyInputError("percentile of an empty window")
    rank = max(1, math.ceil(percentile / 100.0 * v.size))
    return float(v[rank - 1])


def _deltas(s: TimeSeries, absolute: bool) -> np.ndarray:
    d = s.diffs()
    return np.abs(d) if absolute else d


def compute_threshold(series: Sequence[TimeSeries], policy: ThresholdPolicy = ThresholdPolicy()) -> float:
    w = policy.window
    if isinstance(w, SingleDay):
        start = as_minute(np.datetime64(w.day, "D"))
        picks = [(series[w.node], start, start + DAY)]
    else:
        nodes = range(len(series)) if w.nodes is None else w.nodes
        picks = [(series[n], w.start, w.end) for n in nodes]

    pool = []
    for s, start, end in picks:
        if policy.quantity is Quantity.DELTA_P:
            q = _deltas(s, policy.absolute_delta)
        else:
            q = s.values
        ts = s.timestamps
        mask = np.isfinite(q)
        if start is not None:
            mask &= ts >= as_minute(start)
        if end is not None:
            mask &= ts < as_minute(end)
        pool.append(q[mask])
    pool = np.concatenate(pool) if pool else np.empty(0)
    if pool.size == 0:
        raise EmptyInputError("no readings in the threshold window")
    return nearest_rank(pool, policy.percentile)


class Source(str, enum.Enum):
    ACTUAL = "actual"
    PREDICTED = "predicted"


@dataclass(frozen=True)
class SwingEvent:
    node_id: str
    timestamp: np.datetime64
    delta_p: float
    source: Source = Source.ACTUAL


def _swings(s: TimeSeries, threshold: float, source: Source, absolute: bool) -> list[SwingEvent]:
    if not math.isfinite(threshold):
        raise InvalidParameterError("swing threshold must be finite")
    d = _deltas(s, absolute)
    with np.errstate(invalid="ignore"):
        hits = np.flatnonzero(d > threshold)
    ts = s.timestamps
    return [SwingEvent(s.node_id, ts[i], float(d[i]), source) for i in hits]


def detect_swings(series: TimeSeries, threshold: float, absolute: bool = False) -> list[SwingEvent]:
    """One event per step whose change from the previous reading exceeds ``threshold``."""
    return _swings(series, threshold, Source.ACTUAL, absolute)


def predict_swings(forecast: TimeSeries, threshold: float, absolute: bool = False) -> list[SwingEvent]:
    return _swings(forecast, threshold, Source.PREDICTED, absolute)


class ShaveMode(str, enum.Enum):
    CAP = "cap"  # curtail down to the threshold
    REDUCE_BY = "reduce_by"  # curtail by the threshold amount


@dataclass(frozen=True)
class CurtailmentCommand:
    node_id: str
    timestamp: np.datetime64  # the curtailed interval
    issued_at: np.datetime64
    cap: float


def peak_shave(
    actual: TimeSeries, forecast: TimeSeries, threshold: float,
    mode: ShaveMode = ShaveMode.CAP, lead=np.timedelta64(24, "h"),
) -> tuple[TimeSeries, list[CurtailmentCommand]]:
    """Curtail every interval whose forecast exceeds ``threshold``.

    Commands are issued ``lead`` ahead and are assumed to be fully honoured
    by flexible load.  Forecast readings are matched to ``actual`` by
    timestamp; intervals without a forecast are left alone.
    """
    mode = ShaveMode(mode)
    if not threshold > 0:
        raise InvalidParameterError("curtailment cap must be positive")
    lead = np.timedelta64(lead, "m")
    if forecast.end - forecast.start < lead:
        raise InsufficientHorizonError(
            f"forecast for {forecast.node_id} covers {len(forecast)} steps, less than the {lead} lead"
        )
    curtailed = actual.values.copy()
    commands = []
    f_ts = forecast.timestamps
    with np.errstate(invalid="ignore"):
        flagged = np.flatnonzero(forecast.values > threshold)
    for i in flagged:
        ts = f_ts[i]
        j = actual.index_of(ts)
        if not 0 <= j < len(actual) or np.isnan(curtailed[j]):
            continue
        if mode is ShaveMode.CAP:
            curtailed[j] = min(curtailed[j], threshold)
        else:
            curtailed[j] = max(curtailed[j] - threshold, 0.0)
        commands.append(CurtailmentCommand(actual.node_id, ts, ts - lead, threshold))
    return actual.with_values(curtailed), commands


def swing_histogram(events: Sequence[SwingEvent], days: int) -> np.ndarray:
    """Average events per day in each 15-minute time-of-day slot."""
    if days < 1:
        raise InvalidParameterError("days must be >= 1")
    hist = np.zeros(STEPS_PER_DAY)
    for e in events:
        hist[slot_of_day(e.timestamp)] += 1
    return hist / days


@dataclass(frozen=True)
class DayReduction:
    day: np.datetime64
    before: int
    after: int

    @property
    def reduction(self) -> int:
        return self.before - self.after


def swing_reduction_report(
    before: Sequence[SwingEvent], after: Sequence[SwingEvent], days=None
) -> list[DayReduction]:
    """Per-day ``count_before - count_after``; negative days are kept as-is."""
    cb = Counter(np.datetime64(e.timestamp, "D") for e in before)
    ca = Counter(np.datetime64(e.timestamp, "D") for e in after)
    all_days = sorted(set(cb) | set(ca) | set(np.datetime64(d, "D") for d in (days or [])))
    return [DayReduction(d, cb.get(d, 0), ca.get(d, 0)) for d in all_days]
