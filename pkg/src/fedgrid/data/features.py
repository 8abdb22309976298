"""Lagged-feature samples, calendar filtering and month-based splits."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import EmptyDatasetError, InsufficientSpanError, InvalidParameterError
from ..nn import Batch, Sample
from .series import DAY, STEP, STEP_MINUTES, STEPS_PER_DAY, TimeSeries, as_minute, weekday

DEFAULT_LAGS = (15, 30, 60, 90, 120, 1440)


@dataclass(frozen=True)
class LagSpec:
    lags: tuple[int, ...] = DEFAULT_LAGS

    def __post_init__(self):
        lags = tuple(int(m) for m in self.lags)
        if not lags:
            raise InvalidParameterError("at least one lag is required")
        if any(m <= 0 or m % STEP_MINUTES for m in lags):
            raise InvalidParameterError(f"lags must be positive multiples of {STEP_MINUTES}: {lags}")
        if any(b <= a for a, b in zip(lags, lags[1:])):
            raise InvalidParameterError(f"lags must be strictly increasing: {lags}")
        object.__setattr__(self, "lags", lags)

    @property
    def steps(self) -> np.ndarray:
        return np.array(self.lags) // STEP_MINUTES

    @property
    def max_steps(self) -> int:
        return int(self.steps[-1])

    def __len__(self) -> int:
        return len(self.lags)


@dataclass(frozen=True, eq=False)
class Dataset:
    node_id: str
    features: np.ndarray
    targets: np.ndarray
    timestamps: np.ndarray
    lags: LagSpec
    provenance: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return self.targets.shape[0]

    def batch(self, index=None) -> Batch:
        if index is None:
            return Batch(self.features, self.targets)
        return Batch(self.features[index], self.targets[index])

    def samples(self) -> list[Sample]:
        return [
            Sample(x, float(y), t) for x, y, t in zip(self.features, self.targets, self.timestamps)
        ]

    def subset(self, mask, note: str | None = None) -> "Dataset":
        prov = dict(self.provenance)
        if note:
            prov["subset"] = note
        return Dataset(
            self.node_id, self.features[mask], self.targets[mask], self.timestamps[mask],
            self.lags, prov,
        )

    def day_indices(self) -> dict[np.datetime64, np.ndarray]:
        days = self.timestamps.astype("datetime64[D]")
        return {d: np.flatnonzero(days == d) for d in np.unique(days)}

    def full_days(self, per_day: int = STEPS_PER_DAY) -> list[np.ndarray]:
        """Index arrays of days holding exactly ``per_day`` samples, in date order."""
        return [idx for idx in self.day_indices().values() if idx.size == per_day]


def extract_samples(series: TimeSeries, lags: LagSpec = LagSpec()) -> Dataset:
    """One sample per timestamp whose target and every lagged value are present."""
    v = series.values
    k = lags.max_steps
    if len(series) <= k:
        raise EmptyDatasetError(
            f"series {series.node_id} spans {len(series)} steps; lags need more than {k}"
        )
    idx = np.arange(k, len(series))
    X = np.stack([v[idx - s] for s in lags.steps], axis=1)
    y = v[idx]
    ok = np.isfinite(y) & np.isfinite(X).all(axis=1)
    if not ok.any():
        raise EmptyDatasetError(f"no timestamp in {series.node_id} has all lags resolvable")
    return Dataset(
        series.node_id, X[ok], y[ok], series.timestamps[idx[ok]], lags,
        {"source": series.node_id, "lags": list(lags.lags),
         "span": [str(series.start), str(series.end)]},
    )


@dataclass(frozen=True)
class CalendarFilter:
    keep_weekdays: bool = False
    holiday_dates: frozenset = frozenset()

    def __post_init__(self):
        object.__setattr__(
            self, "holiday_dates", frozenset(np.datetime64(d, "D") for d in self.holiday_dates)
        )

    def keeps(self, day) -> bool:
        day = np.datetime64(day, "D")
        if self.keep_weekdays and weekday(day) >= 5:
            return False
        return day not in self.holiday_dates


def filter_days(series: TimeSeries, f: CalendarFilter) -> TimeSeries:
    """Blank out whole removed days.

    The grid is kept and removed days become missing markers, so lag
    lookups that would reach into a removed day fail to resolve instead of
    silently pulling data from another day.
    """
    days = series.timestamps.astype("datetime64[D]")
    drop = np.zeros(len(series), dtype=bool)
    for d in np.unique(days):
        if not f.keeps(d):
            drop |= days == d
    if not drop.any():
        return series
    values = series.values.copy()
    values[drop] = np.nan
    return series.with_values(values)


def month_start(ts) -> np.datetime64:
    return np.datetime64(np.datetime64(ts, "M"), "D")


def next_month(ts) -> np.datetime64:
    return np.datetime64(np.datetime64(ts, "M") + 1, "D")


def split_train_test(
    series: TimeSeries, boundary, lags: LagSpec = LagSpec(), carry_over_days: int = 1
) -> tuple[Dataset, Dataset]:
    """Train on everything before ``boundary``; test on the calendar month after it.

    Test features may reach back ``carry_over_days`` before the boundary
    (inputs only; those timestamps are never test targets).
    """
    boundary = as_minute(np.datetime64(boundary, "D"))
    test_end = as_minute(next_month(boundary))
    if not series.start < boundary < series.end:
        raise InsufficientSpanError(
            f"boundary {boundary} outside data range [{series.start}, {series.end})"
        )
    if carry_over_days < 0:
        raise InvalidParameterError("carry_over_days must be >= 0")
    train = extract_samples(series.window(None, boundary), lags)
    test = extract_samples(series.window(boundary - carry_over_days * DAY, test_end), lags)
    test = test.subset(test.timestamps >= boundary)
    if len(test) == 0:
        raise EmptyDatasetError(f"no resolvable test samples after {boundary}")
    train.provenance.update(split="train", boundary=str(boundary))
    test.provenance.update(split="test", boundary=str(boundary), carry_over_days=carry_over_days)
    return train, test


__all__ = [
    "CalendarFilter", "Dataset", "LagSpec", "DEFAULT_LAGS", "extract_samples", "filter_days",
    "split_train_test", "month_start", "next_month", "STEP",
]
