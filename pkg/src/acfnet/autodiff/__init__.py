"""Minimal reverse-mode differentiation with the layers the severity models use."""

from .gradcheck import GradCheckReport, gradient_check
from .layers import LSTM, BatchNorm, Conv2d, Dense, Module, lstm_layer
from .ops import (batch_norm, conv2d, dense, dropout, leaky_relu, lstm, max_pool, relu,
                  sigmoid, softmax, softmax_cross_entropy, tanh)
from .optim import AdamState, adam_step
from .tensor import Parameter, Tensor, concat, flatten, stack

__all__ = [
    "AdamState", "BatchNorm", "Conv2d", "Dense", "GradCheckReport", "LSTM", "Module",
    "Parameter", "Tensor", "adam_step", "batch_norm", "concat", "conv2d", "dense", "dropout",
    "flatten", "gradient_check", "leaky_relu", "lstm", "lstm_layer", "max_pool", "relu",
    "sigmoid", "softmax", "softmax_cross_entropy", "stack", "tanh",
]
