"""Barrier-synchronous parameter-server training.

Each round the global model broadcasts its weights, every federate takes a
gradient step on one randomly chosen day of its private data and reports
only that step, and the server adds the alpha-weighted sum of the steps:

    w_G <- w_G + sum_i alpha_i * delta_i

Federates standardise their own features and targets; the statistics stay
inside the federate alongside the data.
"""
from __future__ import annotations

import enum
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .data.features import Dataset
from .data.series import STEPS_PER_DAY
from .errors import (
    DataError,
    DivergenceError,
    IncompleteRoundError,
    InvalidParameterError,
    ProtocolDesyncError,
)
from .nn import (
    Activation,
    GradientStep,
    Hyperparams,
    ModelWeights,
    apply_step,
    batch_loss,
    forward_batch,
    gradient_step,
)

log = logging.getLogger(__name__)


class FederateKind(str, enum.Enum):
    HOME_ENERGY_MANAGER = "home_energy_manager"
    EDGE_RESOURCE = "edge_resource"


@dataclass(frozen=True, order=True)
class FederateId:
    index: int
    kind: FederateKind = FederateKind.HOME_ENERGY_MANAGER


@dataclass(frozen=True)
class Standardizer:
    feature_mean: np.ndarray
    feature_std: np.ndarray
    target_mean: float
    target_std: float

    @classmethod
    def fit(cls, ds: Dataset) -> "Standardizer":
        def safe(s):
            return np.where(s > 1e-12, s, 1.0)

        return cls(
            ds.features.mean(axis=0), safe(ds.features.std(axis=0)),
            float(ds.targets.mean()), float(safe(np.array(ds.targets.std()))),
        )

    def features(self, X: np.ndarray) -> np.ndarray:
        return (X - self.feature_mean) / self.feature_std

    def targets(self, y: np.ndarray) -> np.ndarray:
        return (y - self.target_mean) / self.target_std

    def invert(self, y_norm: np.ndarray) -> np.ndarray:
        return y_norm * self.target_std + self.target_mean


@dataclass(frozen=True)
class WeightBroadcast:
    round: int
    weights: ModelWeights


@dataclass(frozen=True)
class GradientReport:
    round: int
    federate: int
    step: GradientStep
    loss: float


@dataclass
class GlobalModel:
    weights: ModelWeights
    round: int = 0

    def broadcast(self) -> WeightBroadcast:
        return WeightBroadcast(self.round, self.weights)


class Federate:
    """One IoT participant holding private training data.

    ``local_dataset`` and the fitted standardiser never appear in any
    message; only :class:`GradientReport` leaves the federate.
    """

    def __init__(
        self, fid: FederateId | int, local_dataset: Dataset, rng_seed: int,
        activation: Activation = Activation.RELU, learning_rate: float = 0.001,
        per_day: int = STEPS_PER_DAY,
    ):
        self.id = fid if isinstance(fid, FederateId) else FederateId(int(fid))
        self.local_dataset = local_dataset
        self.rng_seed = rng_seed
        self.activation = Activation(activation)
        self.learning_rate = learning_rate
        self.normalizer = Standardizer.fit(local_dataset)
        self._X = self.normalizer.features(local_dataset.features)
        self._y = self.normalizer.targets(local_dataset.targets)
        # days with fewer than per_day samples (DST, gaps) are never drawn
        self._days = local_dataset.full_days(per_day)
        if not self._days:
            raise DataError(
                f"federate {self.id.index} ({local_dataset.node_id}) has no complete day of "
                f"{per_day} samples"
            )
        self._rng = np.random.default_rng(rng_seed)
        self.expected_round = 0
        self.current_weights: ModelWeights | None = None

    @property
    def num_days(self) -> int:
        return len(self._days)

    def choose_day(self) -> int:
        return int(self._rng.integers(len(self._days)))

    def day_batch(self, day: int):
        idx = self._days[day]
        return self._X[idx], self._y[idx]

    def predict(self, X: np.ndarray, weights: ModelWeights | None = None) -> np.ndarray:
        """Forecast in kW from raw (unnormalised) lag features."""
        w = self.current_weights if weights is None else weights
        return self.normalizer.invert(forward_batch(w, self.normalizer.features(X), self.activation))


def local_round(f: Federate, b: WeightBroadcast, day: int | None = None) -> GradientReport:
    """LocalTraining: adopt the broadcast weights, step on one random day.

    The loss in the report is evaluated at the broadcast weights, before
    the step is taken.
    """
    if b.round != f.expected_round:
        raise ProtocolDesyncError(
            f"federate {f.id.index} expected round {f.expected_round}, got broadcast for {b.round}"
        )
    f.current_weights = b.weights
    if day is None:
        day = f.choose_day()
    batch = f.day_batch(day)
    # overflow surfaces as a non-finite loss, which train() reports as divergence
    with np.errstate(over="ignore", invalid="ignore"):
        loss = batch_loss(b.weights, batch, f.activation)
        step = gradient_step(b.weights, batch, f.learning_rate, f.activation)
    f.expected_round += 1
    return GradientReport(b.round, f.id.index, step, loss)


@dataclass(frozen=True)
class AggregationWeights:
    alpha: tuple[float, ...]

    def __post_init__(self):
        alpha = tuple(float(a) for a in self.alpha)
        if not alpha or any(not a >= 0 for a in alpha):
            raise InvalidParameterError("aggregation weights must be non-negative")
        object.__setattr__(self, "alpha", alpha)

    @classmethod
    def uniform(cls, n: int) -> "AggregationWeights":
        return cls((1.0 / n,) * n)

    @classmethod
    def summed(cls, n: int) -> "AggregationWeights":
        return cls((1.0,) * n)

    @classmethod
    def from_mode(cls, mode, n: int) -> "AggregationWeights":
        if isinstance(mode, (list, tuple)):
            if len(mode) != n:
                raise InvalidParameterError(f"{len(mode)} aggregation weights for {n} federates")
            return cls(tuple(mode))
        if mode == "uniform":
            return cls.uniform(n)
        if mode == "sum":
            return cls.summed(n)
        raise InvalidParameterError(f"unknown aggregation mode {mode!r}")

    def __len__(self) -> int:
        return len(self.alpha)

    def weighted_mean(self, values: Sequence[float]) -> float:
        total = sum(self.alpha)
        if total == 0:
            return float(np.mean(values))
        return sum(a * v for a, v in zip(self.alpha, values)) / total


def aggregate(
    g: GlobalModel, reports: Sequence[GradientReport], alpha: AggregationWeights
) -> GlobalModel:
    """Apply one synchronous round; summation runs in ascending federate order."""
    n = len(alpha)
    by_fed: dict[int, GradientReport] = {}
    for r in reports:
        if r.round != g.round:
            raise ProtocolDesyncError(f"report from federate {r.federate} is for round {r.round}, "
                                      f"server is at round {g.round}")
        if r.federate in by_fed:
            raise IncompleteRoundError(f"duplicate report from federate {r.federate}")
        by_fed[r.federate] = r
    missing = sorted(set(range(n)) - set(by_fed))
    extra = sorted(set(by_fed) - set(range(n)))
    if missing or extra:
        raise IncompleteRoundError(f"round {g.round}: missing federates {missing}, unknown {extra}")

    total = None
    for i in range(n):
        s = by_fed[i].step
        g.weights.check_congruent(s)
        contrib = [a * alpha.alpha[i] for a in s.arrays()]
        total = contrib if total is None else [t + c for t, c in zip(total, contrib)]
    step = GradientStep(tuple(total[0::2]), tuple(total[1::2]))
    return GlobalModel(apply_step(g.weights, step), g.round + 1)


class StopReason(str, enum.Enum):
    TOLERANCE_REACHED = "tolerance_reached"
    EPOCH_CAP_REACHED = "epoch_cap_reached"


@dataclass
class RoundRecord:
    round: int
    loss: float
    federate_losses: list[float]
    days: list[int]


@dataclass
class TrainingLog:
    rounds: list[RoundRecord] = field(default_factory=list)
    stop_reason: StopReason | None = None

    def __len__(self) -> int:
        return len(self.rounds)

    @property
    def losses(self) -> list[float]:
        return [r.loss for r in self.rounds]

    def to_dict(self) -> dict:
        return {
            "stop_reason": self.stop_reason.value if self.stop_reason else None,
            "rounds": [
                {"round": r.round, "loss": r.loss, "federate_losses": r.federate_losses,
                 "days": r.days}
                for r in self.rounds
            ],
        }


def run_round(
    g: GlobalModel, federates: Sequence[Federate], alpha: AggregationWeights,
    pool: ThreadPoolExecutor | None = None,
) -> tuple[GlobalModel, list[GradientReport], list[int]]:
    b = g.broadcast()
    # draw days up front so the choice never depends on thread scheduling
    days = [f.choose_day() for f in federates]
    if pool is None:
        reports = [local_round(f, b, d) for f, d in zip(federates, days)]
    else:
        reports = list(pool.map(local_round, federates, [b] * len(federates), days))
    return aggregate(g, reports, alpha), reports, days


def train(
    g: GlobalModel, federates: Sequence[Federate], h: Hyperparams,
    alpha: AggregationWeights | None = None, workers: int = 1, observer=None,
) -> tuple[GlobalModel, TrainingLog]:
    """Run rounds until the alpha-weighted mean local loss drops below the
    tolerance or ``h.max_epochs`` rounds have completed."""
    if not federates:
        raise InvalidParameterError("no federates")
    alpha = alpha or AggregationWeights.uniform(len(federates))
    if len(alpha) != len(federates):
        raise InvalidParameterError(f"{len(alpha)} aggregation weights for {len(federates)} federates")
    if [f.id.index for f in federates] != list(range(len(federates))):
        raise InvalidParameterError("federate indices must be 0..N-1 in order")
    dims = {f.local_dataset.features.shape[1] for f in federates}
    if dims != {g.weights.input_dim}:
        raise InvalidParameterError(f"federate feature widths {dims} vs model input {g.weights.input_dim}")
    for f in federates:
        f.learning_rate = h.learning_rate
        f.expected_round = g.round

    log_ = TrainingLog()
    pool = ThreadPoolExecutor(workers) if workers > 1 else None
    try:
        while True:
            t = g.round
            g, reports, days = run_round(g, federates, alpha, pool)
            losses = [r.loss for r in sorted(reports, key=lambda r: r.federate)]
            mean_loss = alpha.weighted_mean(losses)
            if not np.isfinite(mean_loss) or not g.weights.is_finite():
                raise DivergenceError(t)
            log_.rounds.append(RoundRecord(t, mean_loss, losses, days))
            if observer is not None:
                observer(t, g, reports)
            log.debug("round %d loss %.6g", t, mean_loss)
            if mean_loss < h.tolerance:
                log_.stop_reason = StopReason.TOLERANCE_REACHED
                break
            if len(log_) >= h.max_epochs:
                log_.stop_reason = StopReason.EPOCH_CAP_REACHED
                break
    finally:
        if pool is not None:
            pool.shutdown()
    return g, log_
