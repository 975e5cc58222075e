"""Temporal convolutional encoder-decoder with pluggable local pooling."""
from .checkpoint import load_model, save_model
from .layers import LayerSpec, conv1d, softmax, timedense_softmax, upsample_nn
from .model import (ModelParams, TrainConfig, activation_pattern, build_model, cross_entropy,
                    forward, logits, loss_and_grads, predict)
from .train import HISTORY_COLUMNS, evaluate, train

__all__ = [
    "LayerSpec", "ModelParams", "TrainConfig", "HISTORY_COLUMNS", "activation_pattern",
    "build_model", "conv1d", "cross_entropy", "evaluate", "forward", "load_model", "logits",
    "loss_and_grads", "predict", "save_model", "softmax", "timedense_softmax", "train",
    "upsample_nn",
]
