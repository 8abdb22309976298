"""Fully-connected load forecaster with hand-written backpropagation.

Weights follow the ``(out_dim, in_dim)`` convention, so a layer computes
``z = W @ a + b``.  Hidden layers apply the configured activation; the
output layer is linear and produces a single kW value.

Every function here is pure: inputs are never mutated and returned arrays
are read-only.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Callable, NamedTuple, Sequence

import numpy as np

from .errors import EmptyInputError, InvalidSpecError, ShapeError

DTYPE = np.float64


class Activation(str, enum.Enum):
    RELU = "relu"
    TANH = "tanh"
    SIGMOID = "sigmoid"

    def __call__(self, z: np.ndarray) -> np.ndarray:
        return _ACTIVATIONS[self][0](z)

    def derivative(self, z: np.ndarray) -> np.ndarray:
        return _ACTIVATIONS[self][1](z)


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


_ACTIVATIONS: dict[Activation, tuple[Callable, Callable]] = {
    # derivative of ReLU at exactly 0 is taken as 0
    Activation.RELU: (lambda z: np.maximum(z, 0.0), lambda z: (z > 0).astype(DTYPE)),
    Activation.TANH: (np.tanh, lambda z: 1.0 - np.tanh(z) ** 2),
    Activation.SIGMOID: (_sigmoid, lambda z: _sigmoid(z) * (1.0 - _sigmoid(z))),
}


@dataclass(frozen=True)
class LayerSpec:
    input_dim: int = 6
    hidden_dims: tuple[int, ...] = (20, 20)
    output_dim: int = 1
    activation: Activation = Activation.RELU

    def __post_init__(self):
        object.__setattr__(self, "hidden_dims", tuple(int(h) for h in self.hidden_dims))
        object.__setattr__(self, "activation", Activation(self.activation))
        if self.input_dim < 1:
            raise InvalidSpecError(f"input_dim must be >= 1, got {self.input_dim}")
        if self.output_dim != 1:
            raise InvalidSpecError("the forecaster has a scalar output (output_dim=1)")
        for h in self.hidden_dims:
            if h < 1:
                raise InvalidSpecError(f"hidden layer width must be >= 1, got {h}")

    @property
    def dims(self) -> tuple[int, ...]:
        return (self.input_dim, *self.hidden_dims, self.output_dim)

    @property
    def shapes(self) -> list[tuple[tuple[int, int], tuple[int]]]:
        d = self.dims
        return [((o, i), (o,)) for i, o in zip(d[:-1], d[1:])]

    @property
    def num_parameters(self) -> int:
        return sum(o * i + o for (o, i), _ in self.shapes)

    def to_dict(self) -> dict:
        return {
            "input_dim": self.input_dim,
            "hidden_dims": list(self.hidden_dims),
            "output_dim": self.output_dim,
            "activation": self.activation.value,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "LayerSpec":
        return cls(
            input_dim=int(d["input_dim"]),
            hidden_dims=tuple(d["hidden_dims"]),
            output_dim=int(d.get("output_dim", 1)),
            activation=Activation(d.get("activation", "relu")),
        )


def _frozen(a) -> np.ndarray:
    a = np.array(a, dtype=DTYPE, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class LayerArrays:
    """Per-layer weight matrices and bias vectors.

    Base for :class:`ModelWeights` and :class:`GradientStep`; both share
    layout and elementwise arithmetic.
    """

    weights: tuple[np.ndarray, ...]
    biases: tuple[np.ndarray, ...]

    def __post_init__(self):
        ws = tuple(_frozen(w) for w in self.weights)
        bs = tuple(_frozen(b) for b in self.biases)
        if len(ws) != len(bs) or not ws:
            raise ShapeError("need one bias vector per weight matrix")
        for k, (w, b) in enumerate(zip(ws, bs)):
            if w.ndim != 2 or b.shape != (w.shape[0],):
                raise ShapeError(f"layer {k}: weight {w.shape} / bias {b.shape} do not match")
            if k and w.shape[1] != ws[k - 1].shape[0]:
                raise ShapeError(
                    f"layer {k} expects {w.shape[1]} inputs, previous layer gives {ws[k - 1].shape[0]}"
                )
        object.__setattr__(self, "weights", ws)
        object.__setattr__(self, "biases", bs)

    @property
    def shapes(self) -> list[tuple[tuple[int, ...], tuple[int, ...]]]:
        return [(w.shape, b.shape) for w, b in zip(self.weights, self.biases)]

    @property
    def input_dim(self) -> int:
        return self.weights[0].shape[1]

    def arrays(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def flat(self) -> np.ndarray:
        return np.concatenate([a.ravel() for a in self.arrays()])

    @classmethod
    def from_flat(cls, flat: np.ndarray, shapes):
        flat = np.asarray(flat, dtype=DTYPE)
        ws, bs, pos = [], [], 0
        for wshape, bshape in shapes:
            n = int(np.prod(wshape))
            ws.append(flat[pos:pos + n].reshape(wshape))
            pos += n
            n = int(np.prod(bshape))
            bs.append(flat[pos:pos + n].reshape(bshape))
            pos += n
        if pos != flat.size:
            raise ShapeError(f"flat vector has {flat.size} values, shapes need {pos}")
        return cls(tuple(ws), tuple(bs))

    def check_congruent(self, other: "LayerArrays") -> None:
        if self.shapes != other.shapes:
            raise ShapeError(f"shape mismatch: {self.shapes} vs {other.shapes}")

    def is_finite(self) -> bool:
        return all(np.isfinite(a).all() for a in self.arrays())

    def scaled(self, factor: float):
        return type(self)(
            tuple(w * factor for w in self.weights), tuple(b * factor for b in self.biases)
        )

    def max_abs_diff(self, other: "LayerArrays") -> float:
        self.check_congruent(other)
        return float(np.max(np.abs(self.flat() - other.flat())))

    def equals(self, other: "LayerArrays") -> bool:
        """Bit-for-bit equality."""
        return self.shapes == other.shapes and all(
            np.array_equal(a, b) for a, b in zip(self.arrays(), other.arrays())
        )


class ModelWeights(LayerArrays):
    pass


class GradientStep(LayerArrays):
    """A scaled descent step ``-eta * grad L`` laid out like the weights."""


@dataclass(frozen=True)
class Hyperparams:
    learning_rate: float = 0.001
    mini_batch_size: int = 96
    max_epochs: int = 150
    tolerance: float = 0.001

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise InvalidSpecError("learning_rate must be positive")
        if self.mini_batch_size < 1 or self.max_epochs < 1:
            raise InvalidSpecError("mini_batch_size and max_epochs must be >= 1")
        if not self.tolerance >= 0:
            raise InvalidSpecError("tolerance must be non-negative")


@dataclass(frozen=True, eq=False)
class Sample:
    features: np.ndarray
    target: float
    timestamp: np.datetime64 | None = None
    metadata: dict = field(default_factory=dict)


class Batch(NamedTuple):
    features: np.ndarray  # (n, input_dim)
    targets: np.ndarray  # (n,)


def as_batch(batch: Batch | Sequence[Sample] | tuple) -> Batch:
    if isinstance(batch, Batch):
        X, y = batch
    elif isinstance(batch, tuple) and len(batch) == 2 and not isinstance(batch[0], Sample):
        X, y = batch
    else:
        samples = list(batch)
        if not samples:
            raise EmptyInputError("batch is empty")
        X = np.stack([np.asarray(s.features, dtype=DTYPE) for s in samples])
        y = np.array([s.target for s in samples], dtype=DTYPE)
    X = np.asarray(X, dtype=DTYPE)
    y = np.asarray(y, dtype=DTYPE).reshape(-1)
    if X.ndim != 2 or X.shape[0] != y.shape[0]:
        raise ShapeError(f"features {X.shape} and targets {y.shape} disagree")
    if y.shape[0] == 0:
        raise EmptyInputError("batch is empty")
    return Batch(X, y)


def init_weights(spec: LayerSpec, seed: int) -> ModelWeights:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights, zero biases."""
    if not isinstance(spec, LayerSpec):
        raise InvalidSpecError("init_weights needs a LayerSpec")
    rng = np.random.default_rng(seed)
    ws, bs = [], []
    for (out_dim, in_dim), _ in spec.shapes:
        bound = 1.0 / np.sqrt(in_dim)
        ws.append(rng.uniform(-bound, bound, size=(out_dim, in_dim)))
        bs.append(np.zeros(out_dim))
    return ModelWeights(tuple(ws), tuple(bs))


def _check_input(w: LayerArrays, X: np.ndarray) -> None:
    if X.shape[-1] != w.input_dim:
        raise ShapeError(f"expected {w.input_dim} features, got {X.shape[-1]}")


def _forward_cache(w: ModelWeights, X: np.ndarray, activation: Activation):
    """Row-batched forward pass keeping pre-activations for backprop."""
    acts = [X]
    pre = []
    last = len(w.weights) - 1
    for k, (W, b) in enumerate(zip(w.weights, w.biases)):
        z = acts[-1] @ W.T + b
        pre.append(z)
        acts.append(z if k == last else activation(z))
    return acts, pre


def forward_batch(w: ModelWeights, X, activation: Activation = Activation.RELU) -> np.ndarray:
    X = np.asarray(X, dtype=DTYPE)
    if X.ndim != 2:
        raise ShapeError(f"expected a 2-D feature matrix, got shape {X.shape}")
    _check_input(w, X)
    acts, _ = _forward_cache(w, X, Activation(activation))
    return acts[-1][:, 0]


def forward(w: ModelWeights, x, activation: Activation = Activation.RELU) -> float:
    x = np.asarray(x, dtype=DTYPE)
    if x.ndim != 1:
        raise ShapeError(f"expected a feature vector, got shape {x.shape}")
    return float(forward_batch(w, x[None, :], activation)[0])


def batch_loss(w: ModelWeights, batch, activation: Activation = Activation.RELU) -> float:
    """Mean squared prediction error over the batch."""
    X, y = as_batch(batch)
    r = y - forward_batch(w, X, activation)
    return float(np.mean(r * r))


def loss_and_gradient(
    w: ModelWeights, batch, activation: Activation = Activation.RELU
) -> tuple[float, LayerArrays]:
    X, y = as_batch(batch)
    _check_input(w, X)
    activation = Activation(activation)
    acts, pre = _forward_cache(w, X, activation)
    resid = acts[-1][:, 0] - y
    n = y.shape[0]
    loss = float(np.mean(resid * resid))

    delta = (2.0 / n) * resid[:, None]  # dL/dz at the output layer
    gw: list[np.ndarray] = [None] * len(w.weights)
    gb: list[np.ndarray] = [None] * len(w.weights)
    for k in range(len(w.weights) - 1, -1, -1):
        gw[k] = delta.T @ acts[k]
        gb[k] = delta.sum(axis=0)
        if k:
            delta = (delta @ w.weights[k]) * activation.derivative(pre[k - 1])
    return loss, LayerArrays(tuple(gw), tuple(gb))


def gradient_step(
    w: ModelWeights, batch, eta: float, activation: Activation = Activation.RELU
) -> GradientStep:
    if not eta > 0:
        raise InvalidSpecError(f"learning rate must be positive, got {eta}")
    _, grad = loss_and_gradient(w, batch, activation)
    return GradientStep(
        tuple(-eta * g for g in grad.weights), tuple(-eta * g for g in grad.biases)
    )


def apply_step(w: ModelWeights, step: LayerArrays) -> ModelWeights:
    w.check_congruent(step)
    return ModelWeights(
        tuple(a + d for a, d in zip(w.weights, step.weights)),
        tuple(a + d for a, d in zip(w.biases, step.biases)),
    )


def numerical_gradient(
    w: ModelWeights, batch, h: float = 1e-5, activation: Activation = Activation.RELU
) -> LayerArrays:
    """Central finite differences of :func:`batch_loss`, one coordinate at a time."""
    if not h > 0:
        raise InvalidSpecError("finite-difference step must be positive")
    batch = as_batch(batch)
    _check_input(w, batch.features)
    shapes = w.shapes
    base = w.flat()
    grad = np.empty_like(base)
    for i in range(base.size):
        plus = base.copy()
        plus[i] += h
        minus = base.copy()
        minus[i] -= h
        lp = batch_loss(ModelWeights.from_flat(plus, shapes), batch, activation)
        lm = batch_loss(ModelWeights.from_flat(minus, shapes), batch, activation)
        grad[i] = (lp - lm) / (2.0 * h)
    return LayerArrays.from_flat(grad, shapes)

