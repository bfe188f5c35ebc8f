"""Parameter-holding layers built on the functional kernels."""

from __future__ import annotations

from typing import Iterator

import numpy as np

from ..errors import ShapeError
from . import ops
from .tensor import Parameter, Tensor


class Module:
    """Container that discovers parameters and buffers on its attributes."""

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Parameter]]:
        for key, value in vars(self).items():
            if isinstance(value, Parameter):
                yield prefix + key, value
            elif isinstance(value, Module):
                yield from value.named_parameters(prefix + key + ".")
            elif isinstance(value, (list, tuple)):
                for k, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{prefix}{key}.{k}.")

    def named_buffers(self, prefix: str = "") -> Iterator[tuple[str, np.ndarray]]:
        for key in getattr(self, "_buffers", ()):
            yield prefix + key, getattr(self, key)
        for key, value in vars(self).items():
            if isinstance(value, Module):
                yield from value.named_buffers(prefix + key + ".")
            elif isinstance(value, (list, tuple)):
                for k, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_buffers(f"{prefix}{key}.{k}.")

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None

    def state_dict(self) -> dict[str, np.ndarray]:
        state = {name: p.data.copy() for name, p in self.named_parameters()}
        state.update({name: b.copy() for name, b in self.named_buffers()})
        return state

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        params = dict(self.named_parameters())
        buffers = dict(self.named_buffers())
        expected = set(params) | set(buffers)
        if set(state) != expected:
            missing, extra = sorted(expected - set(state)), sorted(set(state) - expected)
            raise ShapeError(f"state mismatch: missing {missing}, unexpected {extra}")
        for name, arr in state.items():
            target = params[name].data if name in params else buffers[name]
            if target.shape != arr.shape:
                raise ShapeError(f"{name}: shape {arr.shape} != {target.shape}")
            target[...] = arr

    def num_parameters(self) -> int:
        return sum(p.data.size for p in self.parameters())


def he_uniform(rng, shape, fan_in, dtype):
    limit = np.sqrt(6.0 / fan_in)
    return rng.uniform(-limit, limit, size=shape).astype(dtype)


def glorot_uniform(rng, shape, fan_in, fan_out, dtype):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape).astype(dtype)


class Dense(Module):
    def __init__(self, n_in: int, n_out: int, activation: str = "none", l2: float = 0.0,
                 rng=None, dtype=np.float32, init: str = "he"):
        rng = rng if rng is not None else np.random.default_rng(0)
        if init == "he":
            w = he_uniform(rng, (n_in, n_out), n_in, dtype)
        else:
            w = glorot_uniform(rng, (n_in, n_out), n_in, n_out, dtype)
        self.weight = Parameter(w, "weight", l2=l2)
        self.bias = Parameter(np.zeros(n_out, dtype=dtype), "bias")
        self.activation = activation

    def __call__(self, x: Tensor) -> Tensor:
        return ops.dense(x, self.weight, self.bias, self.activation)


class Conv2d(Module):
    """Bias-free convolution (every conv here feeds a batch norm)."""

    def __init__(self, c_in: int, c_out: int, kernel, stride=1, dilation=1, padding="same",
                 rng=None, dtype=np.float32):
        rng = rng if rng is not None else np.random.default_rng(0)
        kh, kw = ops._pair(kernel)
        self.weight = Parameter(he_uniform(rng, (c_out, c_in, kh, kw), c_in * kh * kw, dtype), "weight")
        self.stride, self.dilation, self.padding = stride, dilation, padding

    def __call__(self, x: Tensor) -> Tensor:
        return ops.conv2d(x, self.weight, None, self.stride, self.dilation, self.padding)

    def output_hw(self, h: int, w: int) -> tuple[int, int]:
        kh, kw = self.weight.shape[2:]
        sh, sw = ops._pair(self.stride)
        dh, dw = ops._pair(self.dilation)
        return (ops.conv_output_size(h, kh, sh, dh, self.padding)[0],
                ops.conv_output_size(w, kw, sw, dw, self.padding)[0])


class BatchNorm(Module):
    _buffers = ("running_mean", "running_var")

    def __init__(self, n: int, momentum: float = 0.99, eps: float = 1e-5, dtype=np.float32):
        self.gamma = Parameter(np.ones(n, dtype=dtype), "gamma")
        self.beta = Parameter(np.zeros(n, dtype=dtype), "beta")
        self.running_mean = np.zeros(n, dtype=np.float64)
        self.running_var = np.ones(n, dtype=np.float64)
        self.momentum, self.eps = momentum, eps

    def __call__(self, x: Tensor, train: bool) -> Tensor:
        return ops.batch_norm(x, self.gamma, self.beta, self.running_mean, self.running_var,
                              train, self.momentum, self.eps)


class LSTM(Module):
    def __init__(self, n_in: int, units: int, recurrent_dropout: float = 0.0,
                 return_sequences: bool = False, rng=None, dtype=np.float32):
        if not 0 <= recurrent_dropout < 1:
            raise ValueError("recurrent dropout must be in [0, 1)")
        rng = rng if rng is not None else np.random.default_rng(0)
        self.W = Parameter(glorot_uniform(rng, (n_in, 4 * units), n_in, 4 * units, dtype), "W")
        self.U = Parameter(glorot_uniform(rng, (units, 4 * units), units, 4 * units, dtype), "U")
        b = np.zeros(4 * units, dtype=dtype)
        b[units:2 * units] = 1.0  # forget gate
        self.b = Parameter(b, "b")
        self.units = units
        self.recurrent_dropout = recurrent_dropout
        self.return_sequences = return_sequences

    def __call__(self, x: Tensor, mask=None, train: bool = False, rng=None) -> Tensor:
        rmask = None
        if train and self.recurrent_dropout > 0:
            if rng is None:
                raise ValueError("training-mode recurrent dropout needs a random generator")
            p = self.recurrent_dropout
            rmask = (rng.random((x.shape[0], self.units)) >= p) / (1.0 - p)
        H = ops.lstm(x, self.W, self.U, self.b, mask, rmask)
        return H if self.return_sequences else H[:, -1, :]


def lstm_layer(inputs, units: int, recurrent_dropout: float = 0.0, return_sequences: bool = False,
               rng=None, layer: LSTM | None = None, train: bool = False):
    """Run a (new or given) LSTM over a list of [B, F] tensors or a [B, T, F] tensor."""
    from .tensor import stack

    if isinstance(inputs, (list, tuple)):
        if not inputs:
            raise ValueError("LSTM input sequence is empty")
        x = stack(inputs, axis=1)
    else:
        x = inputs
    if layer is None:
        layer = LSTM(x.shape[-1], units, recurrent_dropout, return_sequences, rng=rng, dtype=x.dtype)
    return layer(x, train=train, rng=rng)
