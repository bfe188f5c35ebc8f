"""Central finite-difference checks of analytic gradients."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor


@dataclass
class GradCheckReport:
    tolerance: float
    max_rel_error: dict[str, float] = field(default_factory=dict)

    @property
    def worst(self) -> float:
        return max(self.max_rel_error.values(), default=0.0)

    @property
    def passed(self) -> bool:
        return self.worst < self.tolerance

    @property
    def failures(self) -> list[str]:
        return [k for k, v in self.max_rel_error.items() if not v < self.tolerance]

    def lines(self) -> list[str]:
        return [f"{'ok  ' if v < self.tolerance else 'FAIL'} {k}: {v:.3e}"
                for k, v in self.max_rel_error.items()]


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-8) -> np.ndarray:
    return np.abs(analytic - numeric) / np.maximum(np.abs(analytic) + np.abs(numeric), floor)


def gradient_check(
    loss_fn: Callable[[], Tensor],
    tensors: Sequence[tuple[str, Tensor]],
    tolerance: float = 1e-4,
    eps: float = 1e-5,
    max_entries: int | None = None,
    rng: np.random.Generator | None = None,
) -> GradCheckReport:
    """Compare backprop gradients of ``loss_fn()`` with central differences.

    ``loss_fn`` must rebuild the graph from the current tensor values and be
    deterministic (reseed any dropout inside it). Every tensor should be 64-bit.
    ``max_entries`` limits how many elements per tensor are probed.
    """
    for _, t in tensors:
        t.grad = None
    loss_fn().backward()
    analytic = {name: (t.grad.copy() if t.grad is not None else np.zeros_like(t.data))
                for name, t in tensors}

    report = GradCheckReport(tolerance)
    for name, t in tensors:
        flat = t.data.reshape(-1)
        idx = np.arange(flat.size)
        if max_entries is not None and flat.size > max_entries:
            r = rng if rng is not None else np.random.default_rng(0)
            idx = np.sort(r.choice(flat.size, max_entries, replace=False))
        numeric = np.empty(len(idx))
        for k, i in enumerate(idx):
            orig = flat[i]
            flat[i] = orig + eps
            up = float(loss_fn().data)
            flat[i] = orig - eps
            down = float(loss_fn().data)
            flat[i] = orig
            numeric[k] = (up - down) / (2 * eps)
        a = analytic[name].reshape(-1)[idx]
        report.max_rel_error[name] = float(relative_error(a, numeric).max()) if len(idx) else 0.0
    for _, t in tensors:
        t.grad = None
    return report
