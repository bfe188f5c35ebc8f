"""Dilated CNN, baseline CNN and session LSTM classifiers."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields
from typing import Sequence

import numpy as np

from .autodiff import ops
from .autodiff.layers import LSTM, BatchNorm, Conv2d, Dense, Module
from .autodiff.tensor import Tensor, concat, flatten
from .errors import ShapeError

NUM_CLASSES = 3
DILATION_RATES = (1, 3, 7, 15)

DTYPES = {32: np.float32, 64: np.float64}


def _dtype(precision: int):
    try:
        return DTYPES[int(precision)]
    except KeyError:
        raise ValueError(f"precision must be 32 or 64, got {precision}") from None


def _config_from_dict(cls, d: dict):
    known = {f.name for f in fields(cls)}
    unknown = set(d) - known
    if unknown:
        raise ValueError(f"unknown {cls.__name__} keys: {sorted(unknown)}")
    kw = {k: tuple(v) if isinstance(v, list) else v for k, v in d.items()}
    return cls(**kw)


@dataclass(frozen=True)
class DilatedCnnConfig:
    n_channels: int = 8  # M; the network sees M*M input maps
    max_delay: int = 50  # D; the network sees D+1 delay bins
    parallel_filters: int = 16  # O1
    c5_filters: int = 16
    c5_kernel: tuple[int, int] = (3, 1)
    c5_stride: int = 2
    c6_filters: int = 8  # O2
    c6_kernel: tuple[int, int] = (4, 1)  # K1
    d1_units: int = 64
    d2_units: int = 16  # O3
    dropout: float = 0.5  # DP
    dilation_rates: tuple[int, ...] = DILATION_RATES
    parallel_kernel: tuple[int, int] = (15, 1)
    num_classes: int = NUM_CLASSES
    l2: float = 0.01

    def __post_init__(self):
        if tuple(self.dilation_rates) != DILATION_RATES:
            raise ValueError(f"dilation rates must be {DILATION_RATES}")
        for name in ("n_channels", "parallel_filters", "c5_filters", "c6_filters", "d1_units",
                     "d2_units", "num_classes"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.max_delay < 0:
            raise ValueError("max_delay must be non-negative")
        if not 0 <= self.dropout < 1:
            raise ValueError("dropout must be in [0, 1)")

    @property
    def input_channels(self) -> int:
        return self.n_channels**2

    @property
    def input_delay_bins(self) -> int:
        return self.max_delay + 1

    @property
    def c5_height(self) -> int:
        return math.ceil(self.input_delay_bins / self.c5_stride)

    @property
    def c6_height(self) -> int:
        return self.c5_height - self.c6_kernel[0] + 1

    @property
    def flatten_size(self) -> int:
        return self.c6_height * self.c6_filters

    def expected_parameter_count(self) -> int:
        """Closed-form trainable parameter count (bias-free convs, BN gamma/beta)."""
        kp = self.parallel_kernel[0] * self.parallel_kernel[1]
        o1 = self.parallel_filters
        branches = 4 * (o1 * self.input_channels * kp + 2 * o1)
        c5 = self.c5_filters * 4 * o1 * self.c5_kernel[0] * self.c5_kernel[1] + 2 * self.c5_filters
        c6 = self.c6_filters * self.c5_filters * self.c6_kernel[0] * self.c6_kernel[1] + 2 * self.c6_filters
        d1 = self.flatten_size * self.d1_units + self.d1_units
        d2 = self.d1_units * self.d2_units + self.d2_units
        out = self.d2_units * self.num_classes + self.num_classes
        return branches + c5 + c6 + d1 + d2 + out

    @classmethod
    def from_dict(cls, d: dict) -> "DilatedCnnConfig":
        return _config_from_dict(cls, d)


# Best grid-search settings per feature set.
DILATED_PRESETS = {
    "tv": dict(n_channels=8, parallel_filters=16, c6_filters=8, c6_kernel=(4, 1), d2_units=16, dropout=0.5),
    "mfcc": dict(n_channels=12, parallel_filters=32, c6_filters=16, c6_kernel=(3, 1), d2_units=8, dropout=0.5),
    "formant": dict(n_channels=3, parallel_filters=32, c6_filters=8, c6_kernel=(4, 1), d2_units=16, dropout=0.4),
}

GRID = {
    "parallel_filters": (16, 32),
    "c6_filters": (8, 16),
    "c6_kernel": ((3, 1), (4, 1)),
    "d2_units": (8, 16),
    "dropout": (0.4, 0.5),
}


@dataclass(frozen=True)
class BaselineCnnConfig:
    input_channels: int = 23
    input_frames: int = 1000
    conv1_filters: int = 256
    conv1_kernel: int = 8
    conv2_filters: int = 128
    conv2_kernel: int = 8
    pool: int = 8
    dropout1: float = 0.5
    dropout2: float = 0.7
    dense1_units: int = 64
    num_classes: int = NUM_CLASSES
    l2: float = 0.01

    @property
    def flatten_frames(self) -> int:
        return (self.input_frames // self.pool) // self.pool

    @classmethod
    def from_dict(cls, d: dict) -> "BaselineCnnConfig":
        return _config_from_dict(cls, d)


@dataclass(frozen=True)
class SessionLstmConfig:
    input_size: int = 64
    lstm1_units: int = 64
    lstm2_units: int = 64
    recurrent_dropout1: float = 0.4
    recurrent_dropout2: float = 0.3
    d3_units: int = 32
    num_classes: int = NUM_CLASSES

    @classmethod
    def from_dict(cls, d: dict) -> "SessionLstmConfig":
        return _config_from_dict(cls, d)


LSTM_PRESETS = {
    "tv": dict(lstm1_units=64, lstm2_units=64, recurrent_dropout1=0.4, recurrent_dropout2=0.3, d3_units=32),
    "mfcc": dict(lstm1_units=128, lstm2_units=64, recurrent_dropout1=0.6, recurrent_dropout2=0.4, d3_units=64),
    "formant": dict(lstm1_units=128, lstm2_units=64, recurrent_dropout1=0.7, recurrent_dropout2=0.7, d3_units=16),
}


@dataclass
class SegmentPrediction:
    segment: object
    probabilities: np.ndarray
    embedding: np.ndarray

    @property
    def predicted(self) -> int:
        return int(np.argmax(self.probabilities))

    @property
    def confidence(self) -> float:
        return float(np.max(self.probabilities))


class _ConvBlock(Module):
    """Conv, then batch norm, then LeakyReLU."""

    def __init__(self, c_in, c_out, kernel, stride=1, dilation=1, padding="same", rng=None, dtype=np.float32):
        self.conv = Conv2d(c_in, c_out, kernel, stride, dilation, padding, rng=rng, dtype=dtype)
        self.bn = BatchNorm(c_out, dtype=dtype)

    def __call__(self, x: Tensor, train: bool) -> Tensor:
        return ops.leaky_relu(self.bn(self.conv(x), train))


class DilatedCnn(Module):
    """Segment classifier over standardized ACF matrices.

    Input [B, M*M, D+1, 1]: every channel pair is an input map and the delay
    axis is the convolution axis.
    """

    kind = "dilated_cnn"

    def __init__(self, cfg: DilatedCnnConfig, seed: int = 0, precision: int = 32):
        self.cfg = cfg
        self.precision = int(precision)
        dt = _dtype(precision)
        rng = np.random.default_rng(seed)
        c = cfg.input_channels
        self.branches = [
            _ConvBlock(c, cfg.parallel_filters, cfg.parallel_kernel, 1, (n, 1), "same", rng, dt)
            for n in cfg.dilation_rates
        ]
        self.c5 = _ConvBlock(4 * cfg.parallel_filters, cfg.c5_filters, cfg.c5_kernel,
                             (cfg.c5_stride, 1), 1, "same", rng, dt)
        if cfg.c6_height < 1:
            raise ShapeError(f"C6 kernel {cfg.c6_kernel} does not fit {cfg.c5_height} delay bins")
        self.c6 = _ConvBlock(cfg.c5_filters, cfg.c6_filters, cfg.c6_kernel, 1, 1, "valid", rng, dt)
        self.d1 = Dense(cfg.flatten_size, cfg.d1_units, "relu", cfg.l2, rng, dt)
        self.d2 = Dense(cfg.d1_units, cfg.d2_units, "relu", cfg.l2, rng, dt)
        self.out = Dense(cfg.d2_units, cfg.num_classes, "none", 0.0, rng, dt, init="glorot")

    @property
    def dtype(self):
        return _dtype(self.precision)

    def layer_chain(self) -> list[str]:
        cfg = self.cfg
        h = cfg.input_delay_bins
        chain = [f"input {cfg.input_channels}x{h}x1"]
        for k, n in enumerate(cfg.dilation_rates, start=1):
            chain.append(f"C{k} {cfg.parallel_filters}@{cfg.parallel_kernel} dilation {n} same -> {h}")
        chain.append(f"concat -> {4 * cfg.parallel_filters}x{h}")
        chain.append(f"C5 {cfg.c5_filters}@{cfg.c5_kernel} stride {cfg.c5_stride} same -> {cfg.c5_height}")
        chain.append(f"C6 {cfg.c6_filters}@{cfg.c6_kernel} valid -> {cfg.c6_height}")
        chain.append(f"flatten -> {cfg.flatten_size}")
        chain.append(f"D1 {cfg.d1_units} relu l2 {cfg.l2}")
        chain.append(f"dropout {cfg.dropout}")
        chain.append(f"D2 {cfg.d2_units} relu l2 {cfg.l2}")
        chain.append(f"dropout {cfg.dropout}")
        chain.append(f"output {cfg.num_classes} softmax")
        return chain

    def _as_input(self, acf) -> Tensor:
        x = acf.data if isinstance(acf, Tensor) else np.asarray(acf)
        if x.ndim == 2:
            x = x[None]
        expect = (self.cfg.input_channels, self.cfg.input_delay_bins)
        if x.ndim == 3:
            if x.shape[1:] != expect:
                raise ShapeError(f"ACF input {x.shape[1:]} does not match {expect}")
            x = x[..., None]
        if x.ndim != 4 or x.shape[1:3] != expect or x.shape[3] != 1:
            raise ShapeError(f"ACF input {x.shape} does not match {expect}")
        if isinstance(acf, Tensor):
            return acf.reshape(x.shape) if acf.shape != x.shape else acf
        return Tensor(x.astype(self.dtype, copy=False))

    def forward(self, acf, train: bool = False, rng: np.random.Generator | None = None):
        """Logits [B, 3] and the D1 activations [B, d1_units]."""
        x = self._as_input(acf)
        h = concat([b(x, train) for b in self.branches], axis=1)
        h = self.c5(h, train)
        h = self.c6(h, train)
        emb = self.d1(flatten(h))
        h = ops.dropout(emb, self.cfg.dropout, train, rng)
        h = self.d2(h)
        h = ops.dropout(h, self.cfg.dropout, train, rng)
        return self.out(h), emb

    __call__ = forward


class BaselineCnn(Module):
    """Two-conv-block CNN on frame-level acoustic descriptors, [B, C, frames, 1]."""

    kind = "baseline_cnn"

    def __init__(self, cfg: BaselineCnnConfig, seed: int = 0, precision: int = 32):
        self.cfg = cfg
        self.precision = int(precision)
        dt = _dtype(precision)
        rng = np.random.default_rng(seed)
        if cfg.flatten_frames < 1:
            raise ShapeError(f"{cfg.input_frames} frames vanish after two pools of {cfg.pool}")
        self.conv1 = _ConvBlock(cfg.input_channels, cfg.conv1_filters, (cfg.conv1_kernel, 1), rng=rng, dtype=dt)
        self.conv2 = _ConvBlock(cfg.conv1_filters, cfg.conv2_filters, (cfg.conv2_kernel, 1), rng=rng, dtype=dt)
        self.dense1 = Dense(cfg.flatten_frames * cfg.conv2_filters, cfg.dense1_units, "relu", cfg.l2, rng, dt)
        self.out = Dense(cfg.dense1_units, cfg.num_classes, "none", 0.0, rng, dt, init="glorot")

    @property
    def dtype(self):
        return _dtype(self.precision)

    def _as_input(self, x) -> Tensor:
        arr = np.asarray(x.data if isinstance(x, Tensor) else x)
        if arr.ndim == 2:
            arr = arr[None]
        if arr.ndim == 3:
            arr = arr[..., None]
        expect = (self.cfg.input_channels, self.cfg.input_frames)
        if arr.ndim != 4 or arr.shape[1:3] != expect or arr.shape[3] != 1:
            raise ShapeError(f"baseline input {arr.shape} does not match {expect}")
        return x if isinstance(x, Tensor) and x.shape == arr.shape else Tensor(arr.astype(self.dtype, copy=False))

    def forward(self, x, train: bool = False, rng=None):
        h = self._as_input(x)
        h = self.conv1(h, train)
        h = ops.max_pool(ops.dropout(h, self.cfg.dropout1, train, rng), (self.cfg.pool, 1))
        h = self.conv2(h, train)
        h = ops.max_pool(ops.dropout(h, self.cfg.dropout2, train, rng), (self.cfg.pool, 1))
        emb = self.dense1(flatten(h))
        return self.out(emb), emb

    __call__ = forward


class SessionLstm(Module):
    """Two stacked LSTMs over per-segment embeddings, then D3 and a softmax layer."""

    kind = "session_lstm"

    def __init__(self, cfg: SessionLstmConfig, seed: int = 0, precision: int = 32):
        self.cfg = cfg
        self.precision = int(precision)
        dt = _dtype(precision)
        rng = np.random.default_rng(seed)
        self.lstm1 = LSTM(cfg.input_size, cfg.lstm1_units, cfg.recurrent_dropout1, True, rng, dt)
        self.lstm2 = LSTM(cfg.lstm1_units, cfg.lstm2_units, cfg.recurrent_dropout2, False, rng, dt)
        self.d3 = Dense(cfg.lstm2_units, cfg.d3_units, "relu", 0.0, rng, dt)
        self.out = Dense(cfg.d3_units, cfg.num_classes, "none", 0.0, rng, dt, init="glorot")

    @property
    def dtype(self):
        return _dtype(self.precision)

    def forward(self, x, mask=None, train: bool = False, rng=None) -> Tensor:
        """Logits for a padded batch x [B, T, input_size] with a [B, T] validity mask."""
        if not isinstance(x, Tensor):
            x = Tensor(np.asarray(x, dtype=self.dtype))
        if x.ndim != 3 or x.shape[2] != self.cfg.input_size:
            raise ShapeError(f"session input {x.shape} does not match embedding size {self.cfg.input_size}")
        if x.shape[1] == 0:
            raise ValueError("empty embedding sequence")
        h = self.lstm1(x, mask, train, rng)
        h = self.lstm2(h, mask, train, rng)
        return self.out(self.d3(h))

    __call__ = forward


def pad_sequences(seqs: Sequence[np.ndarray], dtype=np.float32) -> tuple[np.ndarray, np.ndarray]:
    """Right-pad [T_k, F] sequences to [B, T_max, F] with a [B, T_max] mask."""
    if not seqs or any(len(s) == 0 for s in seqs):
        raise ValueError("every sequence needs at least one step")
    F = seqs[0].shape[1]
    T = max(len(s) for s in seqs)
    x = np.zeros((len(seqs), T, F), dtype=dtype)
    mask = np.zeros((len(seqs), T), dtype=dtype)
    for k, s in enumerate(seqs):
        if s.shape[1] != F:
            raise ShapeError(f"sequence {k} has width {s.shape[1]}, expected {F}")
        x[k, : len(s)] = s
        mask[k, : len(s)] = 1.0
    return x, mask


# -- builders and single-item forwards ----------------------------------------

def build_dilated_cnn(cfg: DilatedCnnConfig, seed: int = 0, precision: int = 32) -> DilatedCnn:
    return DilatedCnn(cfg, seed, precision)


def build_baseline_cnn(cfg: BaselineCnnConfig, seed: int = 0, precision: int = 32) -> BaselineCnn:
    return BaselineCnn(cfg, seed, precision)


def build_session_lstm(cfg: SessionLstmConfig, seed: int = 0, precision: int = 32) -> SessionLstm:
    return SessionLstm(cfg, seed, precision)


def forward_segment(model, acf, train: bool = False, rng=None, segment=None) -> SegmentPrediction:
    values = acf.values if hasattr(acf, "values") else acf
    logits, emb = model.forward(values, train=train, rng=rng)
    probs = ops.softmax(logits.data.astype(np.float64))[0]
    return SegmentPrediction(segment, probs, emb.data[0].astype(np.float64))


def forward_session(model: SessionLstm, embeddings, train: bool = False, rng=None) -> np.ndarray:
    seq = np.asarray(embeddings, dtype=model.dtype)
    if seq.ndim != 2 or len(seq) == 0:
        raise ValueError("expected a non-empty [segments, embedding] sequence")
    logits = model.forward(seq[None], None, train, rng)
    return ops.softmax(logits.data.astype(np.float64))[0]


def build_model(kind: str, config: dict, seed: int = 0, precision: int = 32):
    if kind == DilatedCnn.kind:
        return DilatedCnn(DilatedCnnConfig.from_dict(config), seed, precision)
    if kind == BaselineCnn.kind:
        return BaselineCnn(BaselineCnnConfig.from_dict(config), seed, precision)
    if kind == SessionLstm.kind:
        return SessionLstm(SessionLstmConfig.from_dict(config), seed, precision)
    raise ValueError(f"unknown model kind {kind!r}")


def model_config_dict(model) -> dict:
    return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(model.cfg).items()}
