"""Layers, models, losses, optimizers and training loops."""

from .layers import (
    Activation,
    BatchNorm,
    ConcatMerge,
    Conv2D,
    Dense,
    Dropout,
    Flatten,
    GlobalAvgPool,
    LayerSpec,
    MaxPool,
    Upsample,
)
from .model import INFER, TRAIN, Model
from .optim import OptimizerState, step
from .train import evaluate, fit, predict, train_epoch

__all__ = [
    "Activation",
    "BatchNorm",
    "ConcatMerge",
    "Conv2D",
    "Dense",
    "Dropout",
    "Flatten",
    "GlobalAvgPool",
    "LayerSpec",
    "MaxPool",
    "Upsample",
    "Model",
    "TRAIN",
    "INFER",
    "OptimizerState",
    "step",
    "train_epoch",
    "evaluate",
    "fit",
    "predict",
]
