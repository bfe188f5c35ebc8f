"""Differentiable layer kernels: activations, conv2d, batch norm, pooling, LSTM, loss."""

from __future__ import annotations

import math

import numpy as np

from ..errors import ShapeError
from .tensor import Tensor, add, as_tensor, make, matmul

LEAKY_SLOPE = 0.01


# -- activations --------------------------------------------------------------

def relu(x: Tensor) -> Tensor:
    pos = x.data > 0
    return make(np.where(pos, x.data, 0.0).astype(x.dtype), (x,), lambda g: (g * pos,))


def leaky_relu(x: Tensor, slope: float = LEAKY_SLOPE) -> Tensor:
    scale = np.where(x.data > 0, 1.0, slope).astype(x.dtype)
    return make(x.data * scale, (x,), lambda g: (g * scale,))


def sigmoid(x: Tensor) -> Tensor:
    s = _sigmoid(x.data)
    return make(s, (x,), lambda g: (g * s * (1.0 - s),))


def tanh(x: Tensor) -> Tensor:
    t = np.tanh(x.data)
    return make(t, (x,), lambda g: (g * (1.0 - t * t),))


def _sigmoid(z: np.ndarray) -> np.ndarray:
    # Split by sign so exp never overflows.
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


ACTIVATIONS = {"relu": relu, "leaky_relu": leaky_relu, "none": lambda x: x, None: lambda x: x}


def dense(x: Tensor, weights: Tensor, bias: Tensor | None = None, activation: str | None = "none") -> Tensor:
    """Affine map ``x @ W + b`` followed by an activation."""
    if x.ndim != 2 or weights.ndim != 2 or x.shape[1] != weights.shape[0]:
        raise ShapeError(f"dense input {x.shape} does not match weights {weights.shape}")
    y = matmul(x, weights)
    if bias is not None:
        if bias.shape != (weights.shape[1],):
            raise ShapeError(f"bias shape {bias.shape} does not match {weights.shape[1]} units")
        y = add(y, bias)
    try:
        return ACTIVATIONS[activation](y)
    except KeyError:
        raise ValueError(f"unknown activation {activation!r}") from None


# -- convolution --------------------------------------------------------------

def _pair(v) -> tuple[int, int]:
    return (int(v), int(v)) if np.isscalar(v) else (int(v[0]), int(v[1]))


def conv_output_size(n: int, k: int, stride: int, dilation: int, padding: str) -> tuple[int, int, int]:
    """(output size, pad before, pad after) along one spatial axis."""
    span = (k - 1) * dilation + 1
    if padding == "same":
        out = math.ceil(n / stride)
        total = max((out - 1) * stride + span - n, 0)
        return out, total // 2, total - total // 2
    if padding == "valid":
        if span > n:
            raise ShapeError(f"kernel span {span} exceeds input size {n} under valid padding")
        return (n - span) // stride + 1, 0, 0
    raise ValueError(f"padding must be 'same' or 'valid', got {padding!r}")


def conv2d(x: Tensor, kernels: Tensor, bias: Tensor | None = None, stride=1, dilation=1,
           padding: str = "same") -> Tensor:
    """Cross-correlation of ``x`` [B, C, H, W] (or [C, H, W]) with [O, C, kH, kW] kernels."""
    unbatched = x.ndim == 3
    if unbatched:
        x = x.reshape((1,) + x.shape)
    if x.ndim != 4 or kernels.ndim != 4 or x.shape[1] != kernels.shape[1]:
        raise ShapeError(f"conv input {x.shape} incompatible with kernels {kernels.shape}")
    B, C, H, W = x.shape
    O, _, kh, kw = kernels.shape
    sh, sw = _pair(stride)
    dh, dw = _pair(dilation)
    Ho, pt, pb = conv_output_size(H, kh, sh, dh, padding)
    Wo, pl, pr = conv_output_size(W, kw, sw, dw, padding)
    xp = np.pad(x.data, ((0, 0), (0, 0), (pt, pb), (pl, pr))) if pt + pb + pl + pr else x.data

    cols = np.empty((B, Ho, Wo, C, kh, kw), dtype=x.dtype)
    windows = []
    for a in range(kh):
        for b in range(kw):
            win = (slice(None), slice(None),
                   slice(a * dh, a * dh + sh * (Ho - 1) + 1, sh),
                   slice(b * dw, b * dw + sw * (Wo - 1) + 1, sw))
            windows.append((a, b, win))
            cols[..., a, b] = xp[win].transpose(0, 2, 3, 1)
    cols2 = cols.reshape(B * Ho * Wo, C * kh * kw)
    k2 = kernels.data.reshape(O, -1)
    out = (cols2 @ k2.T).reshape(B, Ho, Wo, O).transpose(0, 3, 1, 2)
    if bias is not None:
        out = out + bias.data.reshape(1, O, 1, 1)
    out = np.ascontiguousarray(out)

    def back(g):
        g2 = g.transpose(0, 2, 3, 1).reshape(-1, O)
        dk = (g2.T @ cols2).reshape(kernels.shape)
        dx = None
        if x.requires_grad:
            dcols = (g2 @ k2).reshape(B, Ho, Wo, C, kh, kw)
            dxp = np.zeros_like(xp)
            for a, b, win in windows:
                dxp[win] += dcols[..., a, b].transpose(0, 3, 1, 2)
            dx = dxp[:, :, pt:pt + H, pl:pl + W]
        db = g.sum(axis=(0, 2, 3)) if bias is not None else None
        return (dx, dk, db) if bias is not None else (dx, dk)

    parents = (x, kernels, bias) if bias is not None else (x, kernels)
    y = make(out, parents, back)
    return y.reshape(y.shape[1:]) if unbatched else y


# -- normalization, pooling, dropout ------------------------------------------

def batch_norm(x: Tensor, gamma: Tensor, beta: Tensor, running_mean: np.ndarray,
               running_var: np.ndarray, train: bool, momentum: float = 0.99,
               eps: float = 1e-5) -> Tensor:
    """Normalize over every axis except axis 1; running stats are updated in place."""
    axes = (0,) + tuple(range(2, x.ndim))
    bshape = (1, x.shape[1]) + (1,) * (x.ndim - 2)
    g_ = gamma.data.reshape(bshape)
    if train:
        n = x.data.size // x.shape[1]
        if x.shape[0] < 2:
            raise ValueError("batch norm in training mode needs a batch of at least 2")
        mean = x.data.mean(axis=axes, keepdims=True)
        var = x.data.var(axis=axes, keepdims=True)
        inv = 1.0 / np.sqrt(var + eps)
        xhat = (x.data - mean) * inv
        running_mean *= momentum
        running_mean += (1 - momentum) * mean.reshape(-1)
        running_var *= momentum
        running_var += (1 - momentum) * var.reshape(-1)

        def back(g):
            dxhat = g * g_
            dx = inv / n * (n * dxhat - dxhat.sum(axis=axes, keepdims=True)
                            - xhat * (dxhat * xhat).sum(axis=axes, keepdims=True))
            return dx, (g * xhat).sum(axis=axes), g.sum(axis=axes)
    else:
        inv = (1.0 / np.sqrt(running_var + eps)).reshape(bshape).astype(x.dtype)
        xhat = (x.data - running_mean.reshape(bshape)) * inv

        def back(g):
            return g * g_ * inv, (g * xhat).sum(axis=axes), g.sum(axis=axes)

    out = (xhat * g_ + beta.data.reshape(bshape)).astype(x.dtype)
    return make(out, (x, gamma, beta), back)


def max_pool(x: Tensor, pool) -> Tensor:
    """Non-overlapping max pooling on [B, C, H, W]; trailing remainder frames are dropped."""
    ph, pw = _pair(pool)
    B, C, H, W = x.shape
    if ph > H or pw > W:
        raise ShapeError(f"pool {(ph, pw)} larger than input {(H, W)}")
    Ho, Wo = H // ph, W // pw
    crop = x.data[:, :, :Ho * ph, :Wo * pw]
    blocks = crop.reshape(B, C, Ho, ph, Wo, pw).transpose(0, 1, 2, 4, 3, 5).reshape(B, C, Ho, Wo, ph * pw)
    arg = blocks.argmax(axis=-1)
    out = np.take_along_axis(blocks, arg[..., None], axis=-1)[..., 0]

    def back(g):
        gb = np.zeros_like(blocks)
        np.put_along_axis(gb, arg[..., None], g[..., None], axis=-1)
        gc = gb.reshape(B, C, Ho, Wo, ph, pw).transpose(0, 1, 2, 4, 3, 5).reshape(B, C, Ho * ph, Wo * pw)
        dx = np.zeros_like(x.data)
        dx[:, :, :Ho * ph, :Wo * pw] = gc
        return (dx,)

    return make(out, (x,), back)


def dropout(x: Tensor, p: float, train: bool, rng: np.random.Generator | None) -> Tensor:
    """Inverted dropout; the identity outside training or when ``p == 0``."""
    if not 0 <= p < 1:
        raise ValueError(f"dropout probability must be in [0, 1), got {p}")
    if not train or p == 0:
        return x
    if rng is None:
        raise ValueError("training-mode dropout needs a random generator")
    mask = ((rng.random(x.shape) >= p) / (1.0 - p)).astype(x.dtype)
    return make(x.data * mask, (x,), lambda g: (g * mask,))


# -- recurrent ----------------------------------------------------------------

def lstm(x: Tensor, W: Tensor, U: Tensor, b: Tensor, mask: np.ndarray | None = None,
         recurrent_mask: np.ndarray | None = None) -> Tensor:
    """Run an LSTM over x [B, T, F] and return every hidden state [B, T, units].

    Gate order in the stacked weights is input, forget, cell, output. Where
    ``mask`` is 0 (padding) the state is carried over unchanged, so the last
    column equals the state after each sequence's final real step.
    ``recurrent_mask`` multiplies the previous hidden state before it enters
    the recurrent matmul (one mask per sequence).
    """
    if x.ndim != 3:
        raise ShapeError(f"LSTM input must be [batch, time, features], got {x.shape}")
    B, T, F = x.shape
    u = U.shape[0]
    if T == 0:
        raise ValueError("LSTM input sequence is empty")
    if W.shape != (F, 4 * u) or U.shape != (u, 4 * u) or b.shape != (4 * u,):
        raise ShapeError(f"LSTM weights {W.shape}, {U.shape}, {b.shape} do not fit {F} inputs / {u} units")
    dt = x.dtype
    m = np.ones((B, T), dtype=dt) if mask is None else np.asarray(mask, dtype=dt)
    rm = np.ones((B, u), dtype=dt) if recurrent_mask is None else np.asarray(recurrent_mask, dtype=dt)

    xz = (x.data.reshape(B * T, F) @ W.data).reshape(B, T, 4 * u) + b.data
    h = np.zeros((B, u), dtype=dt)
    c = np.zeros((B, u), dtype=dt)
    H = np.empty((B, T, u), dtype=dt)
    cache = []
    for t in range(T):
        hd = h * rm
        z = xz[:, t] + hd @ U.data
        i = _sigmoid(z[:, :u])
        f = _sigmoid(z[:, u:2 * u])
        g = np.tanh(z[:, 2 * u:3 * u])
        o = _sigmoid(z[:, 3 * u:])
        c_new = f * c + i * g
        tc = np.tanh(c_new)
        h_new = o * tc
        mt = m[:, t, None]
        cache.append((hd, c, i, f, g, o, tc, mt))
        c = mt * c_new + (1 - mt) * c
        h = mt * h_new + (1 - mt) * h
        H[:, t] = h

    def back(dH):
        dU = np.zeros_like(U.data)
        dz_all = np.empty((B, T, 4 * u), dtype=dt)
        dh = np.zeros((B, u), dtype=dt)
        dc = np.zeros((B, u), dtype=dt)
        for t in range(T - 1, -1, -1):
            hd, c_prev, i, f, g, o, tc, mt = cache[t]
            dh = dh + dH[:, t]
            dh_new = mt * dh
            dc_new = mt * dc + dh_new * o * (1 - tc * tc)
            dz = np.concatenate([
                dc_new * g * i * (1 - i),
                dc_new * c_prev * f * (1 - f),
                dc_new * i * (1 - g * g),
                dh_new * tc * o * (1 - o),
            ], axis=1)
            dz_all[:, t] = dz
            dU += hd.T @ dz
            dc = dc_new * f + (1 - mt) * dc
            dh = (dz @ U.data.T) * rm + (1 - mt) * dh
        dz2 = dz_all.reshape(B * T, 4 * u)
        dW = x.data.reshape(B * T, F).T @ dz2
        dx = (dz2 @ W.data.T).reshape(B, T, F) if x.requires_grad else None
        return dx, dW, dU, dz2.sum(axis=0)

    return make(H, (x, W, U, b), back)


# -- loss ---------------------------------------------------------------------

def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_cross_entropy(logits: Tensor, targets, class_weights=None,
                          reduction: str = "mean") -> Tensor:
    """Weighted categorical cross-entropy on raw logits.

    Each sample contributes ``-w[target] * log softmax(logits)[target]``; the
    batch loss is the mean (or sum) of those terms.
    """
    logits = as_tensor(logits)
    if logits.ndim == 1:
        logits = logits.reshape((1, -1))
        targets = np.atleast_1d(targets)
    B, K = logits.shape
    y = np.asarray(targets, dtype=np.int64).reshape(-1)
    if y.shape != (B,):
        raise ShapeError(f"{len(y)} targets for {B} logit rows")
    if np.any(y < 0) or np.any(y >= K):
        raise ValueError(f"targets must lie in [0, {K})")
    w = np.ones(K) if class_weights is None else np.asarray(class_weights, dtype=np.float64)
    if w.shape != (K,) or np.any(w <= 0):
        raise ValueError("class weights must be positive, one per class")
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    log_p = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    ws = w[y].astype(logits.dtype)
    per = -ws * log_p[np.arange(B), y]
    scale = 1.0 / B if reduction == "mean" else 1.0
    if reduction not in ("mean", "sum"):
        raise ValueError(f"unknown reduction {reduction!r}")
    p = np.exp(log_p)

    def back(g):
        d = p.copy()
        d[np.arange(B), y] -= 1.0
        return ((g * scale) * ws[:, None] * d,)

    return make(np.asarray(per.sum() * scale, dtype=logits.dtype), (logits,), back)
