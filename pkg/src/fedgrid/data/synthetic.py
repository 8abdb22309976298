"""Synthetic distribution-feeder load profiles."""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
from scipy.signal import lfilter

from ..errors import InvalidParameterError
from .series import STEPS_PER_DAY, TimeSeries, as_minute, weekday

DEFAULT_START = "2021-06-01"


@dataclass(frozen=True)
class ProfileShape:
    """Daily shape of the base household/feeder-node load, in kW.

    Two Gaussian bumps (morning, evening) on a flat baseline.  Weekend
    days are scaled by ``weekend_factor``.
    """

    baseline_kw: float = 14.0
    morning_peak_kw: float = 6.0
    morning_hour: float = 7.5
    morning_width_h: float = 1.2
    evening_peak_kw: float = 18.0
    evening_hour: float = 19.0
    evening_width_h: float = 1.6
    weekend_factor: float = 0.85
    noise: float = 0.02
    floor_kw: float = 5.0
    ceiling_kw: float = 45.0

    def to_dict(self) -> dict:
        return asdict(self)

    def daily(self, hours: np.ndarray) -> np.ndarray:
        def bump(height, centre, width):
            return height * np.exp(-0.5 * ((hours - centre) / width) ** 2)

        return (
            self.baseline_kw
            + bump(self.morning_peak_kw, self.morning_hour, self.morning_width_h)
            + bump(self.evening_peak_kw, self.evening_hour, self.evening_width_h)
        )


def default_base_profile(
    days: int, seed: int, start=DEFAULT_START, shape: ProfileShape | None = None,
    node_id: str = "node0000",
) -> TimeSeries:
    if days < 1:
        raise InvalidParameterError("days must be >= 1")
    shape = shape or ProfileShape()
    start = as_minute(np.datetime64(start, "D"))
    n = days * STEPS_PER_DAY
    hours = (np.arange(n) % STEPS_PER_DAY) / (STEPS_PER_DAY / 24)
    day_idx = np.arange(n) // STEPS_PER_DAY
    first = np.datetime64(start, "D")
    weekend = np.array([weekday(first + d) >= 5 for d in range(days)])[day_idx]

    rng = np.random.default_rng(seed)
    load = shape.daily(hours) * np.where(weekend, shape.weekend_factor, 1.0)
    load = load * (1.0 + shape.noise * rng.standard_normal(n))
    return TimeSeries(node_id, start, np.clip(load, shape.floor_kw, shape.ceiling_kw))


def generate_feeder(
    base: TimeSeries, num_nodes: int, sigma: float, seed: int,
    correlation: float = 0.0, floor: float = 0.1,
) -> list[TimeSeries]:
    """Perturb ``base`` into ``num_nodes`` series.

    Node 0 is ``base`` itself.  Node ``n`` is ``base * max(1 + g_n, floor)``
    where ``g_n`` is a zero-mean Gaussian process with marginal standard
    deviation ``sigma`` at every timestep.  ``correlation`` is the lag-one
    autocorrelation of ``g_n`` (AR(1)); 0 gives i.i.d. draws per timestep.
    """
    if num_nodes < 1:
        raise InvalidParameterError("num_nodes must be >= 1")
    if not sigma >= 0:
        raise InvalidParameterError(f"sigma must be >= 0, got {sigma}")
    if not 0 <= correlation < 1:
        raise InvalidParameterError("correlation must lie in [0, 1)")
    nodes = [base]
    if num_nodes == 1:
        return nodes
    rng = np.random.default_rng(seed)
    shocks = rng.standard_normal((num_nodes - 1, len(base)))
    shocks[:, 1:] *= np.sqrt(1.0 - correlation**2)
    g = sigma * lfilter([1.0], [1.0, -correlation], shocks, axis=1)
    factors = np.maximum(1.0 + g, floor)
    width = max(4, len(str(num_nodes - 1)))
    for n in range(1, num_nodes):
        nodes.append(base.with_values(base.values * factors[n - 1], node_id=f"node{n:0{width}d}"))
    return nodes
