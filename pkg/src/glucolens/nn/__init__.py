"""Minimal numpy network framework for the M1-M4 regressors."""

from .adam import AdamState, adam_update
from .layers import ACTIVATIONS
from .model import (
    MODEL_IDS,
    LayerSpec,
    ModelSpec,
    Optimizer,
    TrainConfig,
    TrainedModel,
    TrainingError,
    build_model,
    fit,
    forward,
    gradient_check,
    init_model,
    loss_and_grads,
    train_step,
    with_training,
)

__all__ = [
    "ACTIVATIONS",
    "AdamState",
    "LayerSpec",
    "MODEL_IDS",
    "ModelSpec",
    "Optimizer",
    "TrainConfig",
    "TrainedModel",
    "TrainingError",
    "adam_update",
    "build_model",
    "fit",
    "forward",
    "gradient_check",
    "init_model",
    "loss_and_grads",
    "train_step",
    "with_training",
]
