"""Adam with bias correction and decoupled-from-loss L2 gradient decay."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from ..errors import NumericError
from .tensor import Parameter


@dataclass
class AdamState:
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(params: Sequence[tuple[str, Parameter]], state: AdamState,
              grads: dict[str, np.ndarray] | None = None) -> AdamState:
    """Apply one Adam update in place.

    ``params`` is a list of (name, Parameter). Gradients come from ``grads`` if
    given, else from each parameter's ``grad`` (missing means zero). A parameter
    with ``l2 > 0`` has ``l2 * theta`` added to its gradient first.
    """
    prepared = []
    for name, p in params:
        g = grads[name] if grads is not None and name in grads else p.grad
        g = np.zeros_like(p.data) if g is None else np.asarray(g)
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient for parameter {name!r}", name)
        if p.l2 > 0:
            g = g + p.l2 * p.data
        prepared.append((name, p, g))

    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**t
    c2 = 1.0 - b2**t
    for name, p, g in prepared:
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        update = state.learning_rate * (m / c1) / (np.sqrt(v / c2) + state.eps)
        p.data -= update.astype(p.data.dtype)
    return state
