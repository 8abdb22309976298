"""Fixed-cadence power series.

Missing readings are stored as NaN; they are never skipped or compacted,
so index arithmetic always corresponds to wall-clock arithmetic.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import DataError

STEP_MINUTES = 15
STEP = np.timedelta64(STEP_MINUTES, "m")
STEPS_PER_DAY = 24 * 60 // STEP_MINUTES
DAY = np.timedelta64(1, "D")


def as_minute(ts) -> np.datetime64:
    return np.datetime64(ts, "m")


def day_of(ts) -> np.datetime64:
    return np.datetime64(ts, "D")


def weekday(day) -> int:
    """Monday=0 ... Sunday=6."""
    return int((np.datetime64(day, "D").astype(np.int64) + 3) % 7)


def slot_of_day(ts) -> int:
    """Index of the 15-minute slot within its day, 0..95."""
    minutes = (as_minute(ts) - day_of(ts)).astype("timedelta64[m]").astype(np.int64)
    return int(minutes // STEP_MINUTES)


def on_grid(ts) -> bool:
    return int(as_minute(ts).astype(np.int64)) % STEP_MINUTES == 0


@dataclass(frozen=True, eq=False)
class TimeSeries:
    node_id: str
    start: np.datetime64
    values: np.ndarray

    def __post_init__(self):
        start = as_minute(self.start)
        if not on_grid(start):
            raise DataError(f"series start {start} is not on the 15-minute grid")
        values = np.array(self.values, dtype=np.float64, copy=True)
        if values.ndim != 1:
            raise DataError("series values must be one-dimensional")
        if np.isinf(values).any():
            raise DataError(f"series {self.node_id} contains infinite readings")
        values.setflags(write=False)
        object.__setattr__(self, "start", start)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "node_id", str(self.node_id))

    def __len__(self) -> int:
        return self.values.shape[0]

    @property
    def end(self) -> np.datetime64:
        """Exclusive end timestamp."""
        return self.start + len(self) * STEP

    @property
    def timestamps(self) -> np.ndarray:
        return self.start + np.arange(len(self)) * STEP

    @property
    def missing(self) -> np.ndarray:
        return np.isnan(self.values)

    def valid_count(self) -> int:
        return int(np.count_nonzero(~self.missing))

    def index_of(self, ts) -> int:
        delta = as_minute(ts) - self.start
        steps, rem = divmod(int(delta.astype(np.int64)), STEP_MINUTES)
        if rem:
            raise DataError(f"{ts} is not on the series grid")
        return steps

    def value_at(self, ts) -> float:
        i = self.index_of(ts)
        if not 0 <= i < len(self):
            raise DataError(f"{ts} outside series {self.node_id}")
        return float(self.values[i])

    def window(self, start=None, end=None) -> "TimeSeries":
        """Sub-series covering ``[start, end)``, clamped to the data."""
        i0 = 0 if start is None else max(0, self.index_of(start))
        i1 = len(self) if end is None else min(len(self), self.index_of(end))
        i1 = max(i0, i1)
        return TimeSeries(self.node_id, self.start + i0 * STEP, self.values[i0:i1])

    def with_values(self, values, node_id: str | None = None) -> "TimeSeries":
        return TimeSeries(self.node_id if node_id is None else node_id, self.start, values)

    def days(self) -> np.ndarray:
        return np.unique(self.timestamps.astype("datetime64[D]"))

    def diffs(self) -> np.ndarray:
        """``P_t - P_{t-1}`` aligned to ``t``; the first entry is NaN."""
        d = np.full(len(self), np.nan)
        d[1:] = np.diff(self.values)
        return d

    def mean(self) -> float:
        return float(np.nanmean(self.values))


def align(series: TimeSeries, start, end) -> np.ndarray:
    """Values of ``series`` on the grid ``[start, end)``; NaN outside its span."""
    start, end = as_minute(start), as_minute(end)
    n = int((end - start) // STEP)
    out = np.full(n, np.nan)
    offset = series.index_of(start)
    lo, hi = max(0, -offset), min(n, len(series) - offset)
    if hi > lo:
        out[lo:hi] = series.values[offset + lo:offset + hi]
    return out
