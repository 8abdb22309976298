"""Federated short-term load forecasting for distribution feeders, with
forecast-driven swing detection and peak shaving."""

from .nn import (
    Activation,
    GradientStep,
    Hyperparams,
    LayerSpec,
    ModelWeights,
    Sample,
    apply_step,
    batch_loss,
    forward,
    gradient_step,
    init_weights,
    numerical_gradient,
)
from .protocol import (
    AggregationWeights,
    Federate,
    GlobalModel,
    GradientReport,
    WeightBroadcast,
    aggregate,
    local_round,
    train,
)

__version__ = "0.1.0"
