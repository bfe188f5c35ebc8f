"""Finite-difference gradient checks for every layer the models use, plus a whole CNN."""

from __future__ import annotations

import numpy as np

from .autodiff import ops
from .autodiff.gradcheck import GradCheckReport, gradient_check
from .autodiff.tensor import Tensor, tsum
from .models import DilatedCnn, DilatedCnnConfig

LAYER_TOLERANCE = 1e-4
MODEL_TOLERANCE = 1e-3


def _t(a) -> Tensor:
    return Tensor(np.asarray(a, dtype=np.float64), requires_grad=True)


def _probe(out: Tensor, proj: np.ndarray) -> Tensor:
    """Scalar loss sum(out * proj): a random projection exercises every output entry."""
    return tsum(out * Tensor(proj))


def check_dilated_conv(rng, dilation: int = 3) -> GradCheckReport:
    x = _t(rng.standard_normal((2, 2, 9, 3)))
    k = _t(rng.standard_normal((3, 2, 3, 1)) * 0.5)
    proj = rng.standard_normal((2, 3, 9, 3))
    return gradient_check(lambda: _probe(ops.conv2d(x, k, dilation=(dilation, 1)), proj),
                          [("x", x), ("kernel", k)], LAYER_TOLERANCE)


def check_strided_conv(rng) -> GradCheckReport:
    x = _t(rng.standard_normal((2, 2, 9, 2)))
    k = _t(rng.standard_normal((2, 2, 3, 1)) * 0.5)
    proj = rng.standard_normal((2, 2, 5, 2))
    return gradient_check(lambda: _probe(ops.conv2d(x, k, stride=(2, 1)), proj),
                          [("x", x), ("kernel", k)], LAYER_TOLERANCE)


def check_dense(rng) -> GradCheckReport:
    x = _t(rng.standard_normal((4, 6)))
    w = _t(rng.uniform(-0.7, 0.7, (6, 5)))
    b = _t(rng.standard_normal(5) * 0.1)
    proj = rng.standard_normal((4, 5))
    return gradient_check(lambda: _probe(ops.dense(x, w, b, "relu"), proj),
                          [("x", x), ("weight", w), ("bias", b)], LAYER_TOLERANCE)


def check_batch_norm(rng) -> GradCheckReport:
    x = _t(rng.standard_normal((4, 3, 5, 1)) * 2 + 1)
    g = _t(rng.uniform(0.5, 1.5, 3))
    b = _t(rng.standard_normal(3))
    proj = rng.standard_normal((4, 3, 5, 1))
    mean, var = np.zeros(3), np.ones(3)
    return gradient_check(lambda: _probe(ops.batch_norm(x, g, b, mean, var, train=True), proj),
                          [("x", x), ("gamma", g), ("beta", b)], LAYER_TOLERANCE)


def check_max_pool(rng) -> GradCheckReport:
    # A permutation keeps every pooling window free of ties.
    x = _t(rng.permutation(2 * 2 * 9 * 4).reshape(2, 2, 9, 4) * 0.1)
    proj = rng.standard_normal((2, 2, 4, 2))
    return gradient_check(lambda: _probe(ops.max_pool(x, (2, 2)), proj), [("x", x)], LAYER_TOLERANCE)


def check_lstm(rng) -> GradCheckReport:
    x = _t(rng.standard_normal((3, 4, 5)))
    units = 3
    w = _t(rng.uniform(-0.5, 0.5, (5, 4 * units)))
    u = _t(rng.uniform(-0.5, 0.5, (units, 4 * units)))
    b = _t(rng.standard_normal(4 * units) * 0.1)
    mask = np.array([[1, 1, 1, 1], [1, 1, 0, 0], [1, 1, 1, 0]], dtype=np.float64)
    rmask = (rng.random((3, units)) >= 0.3) / 0.7
    proj = rng.standard_normal((3, 4, units))
    return gradient_check(lambda: _probe(ops.lstm(x, w, u, b, mask, rmask), proj),
                          [("x", x), ("W", w), ("U", u), ("b", b)], LAYER_TOLERANCE)


def check_weighted_cross_entropy(rng) -> GradCheckReport:
    logits = _t(rng.standard_normal((6, 3)))
    targets = np.array([0, 1, 2, 2, 1, 0])
    weights = np.array([2.0, 0.5, 1.25])
    return gradient_check(lambda: ops.softmax_cross_entropy(logits, targets, weights),
                          [("logits", logits)], LAYER_TOLERANCE)


def check_full_cnn(rng, max_entries: int = 12) -> GradCheckReport:
    """A reduced dilated CNN at 64-bit, in training mode with a fixed dropout draw."""
    cfg = DilatedCnnConfig(n_channels=3, max_delay=10, parallel_filters=2, c5_filters=3,
                           c6_filters=2, c6_kernel=(3, 1), d1_units=6, d2_units=4, dropout=0.3)
    model = DilatedCnn(cfg, seed=int(rng.integers(1 << 31)), precision=64)
    x = _t(rng.standard_normal((4, 9, 11)))
    y = np.array([0, 1, 2, 1])
    weights = np.array([1.5, 0.75, 1.0])

    def loss():
        logits, _ = model.forward(x, train=True, rng=np.random.default_rng(7))
        return ops.softmax_cross_entropy(logits, y, weights)

    tensors = [("input", x)] + list(model.named_parameters())
    return gradient_check(loss, tensors, MODEL_TOLERANCE, max_entries=max_entries, rng=rng)


LAYER_CHECKS = {
    "dilated_conv": check_dilated_conv,
    "strided_conv": check_strided_conv,
    "dense": check_dense,
    "batch_norm": check_batch_norm,
    "max_pool": check_max_pool,
    "lstm": check_lstm,
    "weighted_softmax_ce": check_weighted_cross_entropy,
}


def gradcheck_suite(seed: int = 0, include_model: bool = True) -> dict[str, GradCheckReport]:
    rng = np.random.default_rng(seed)
    out = {name: fn(rng) for name, fn in LAYER_CHECKS.items()}
    if include_model:
        out["full_dilated_cnn"] = check_full_cnn(rng)
    return out
