"""Forecast accuracy: RMSE per node and averaged over a fleet."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .errors import EmptyInputError

# Reference RMSE values (kW) attached to reports as annotations, never asserted.
REFERENCE_RMSE = {"synthetic_feeder_1000": 1.642, "pecan_street": 1.98, "conclusion_summary": 1.3}


@dataclass(frozen=True)
class ForecastRecord:
    node_id: str
    timestamp: np.datetime64
    predicted: float
    actual: float


def rmse_arrays(predicted, actual) -> float:
    p = np.asarray(predicted, dtype=np.float64)
    a = np.asarray(actual, dtype=np.float64)
    if p.size == 0:
        raise EmptyInputError("rmse of no records")
    e = np.abs(a - p)
    scale = float(e.max())
    if scale == 0.0 or not math.isfinite(scale):
        return scale
    # scaled to avoid under/overflow when squaring
    return scale * math.sqrt(float(np.mean((e / scale) ** 2)))


def rmse(records: Sequence[ForecastRecord]) -> float:
    if not records:
        raise EmptyInputError("rmse of no records")
    return rmse_arrays([r.predicted for r in records], [r.actual for r in records])


def fleet_rmse(per_node: Mapping[str, Sequence[ForecastRecord]]) -> tuple[dict[str, float], float]:
    """Per-node RMSE and their unweighted mean."""
    if not per_node:
        raise EmptyInputError("fleet has no nodes")
    scores = {}
    for node, recs in per_node.items():
        if not recs:
            raise EmptyInputError(f"node {node} has no forecast records")
        scores[node] = rmse(recs)
    return scores, float(np.mean(list(scores.values())))


def rmse_report(per_node: Mapping[str, Sequence[ForecastRecord]], config_hash: str | None) -> dict:
    scores, mean = fleet_rmse(per_node)
    return {
        "per_node": [{"node": n, "rmse": v} for n, v in scores.items()],
        "fleet_mean": mean,
        "config_hash": config_hash,
        "reference_rmse": REFERENCE_RMSE,
    }
