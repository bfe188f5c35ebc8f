"""Channel-delay correlation matrices and their dataset-level standardization."""

from __future__ import annotations

import csv
import io
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .dsp import ChannelSeries
from .errors import ContractWarning, FormatError

STD_FLOOR = 1e-8


def delayed_correlation(x_i, x_j, d: int) -> float:
    """Sum of x_i[t] * x_j[t + d] over the overlap, divided by N - d."""
    x_i = np.asarray(x_i, dtype=np.float64)
    x_j = np.asarray(x_j, dtype=np.float64)
    if x_i.shape != x_j.shape or x_i.ndim != 1:
        raise ValueError(f"channels must be 1-D and equal length, got {x_i.shape} and {x_j.shape}")
    n = len(x_i)
    if not 0 <= d < n:
        raise ValueError(f"delay {d} must lie in [0, {n})")
    return float(np.dot(x_i[: n - d], x_j[d:]) / (n - abs(d)))


def correlation_vector(x_i, x_j, max_delay: int) -> np.ndarray:
    x_i = np.asarray(x_i, dtype=np.float64)
    x_j = np.asarray(x_j, dtype=np.float64)
    if x_i.shape != x_j.shape or x_i.ndim != 1:
        raise ValueError(f"channels must be 1-D and equal length, got {x_i.shape} and {x_j.shape}")
    n = len(x_i)
    if not 0 <= max_delay < n:
        raise ValueError(f"max delay {max_delay} must lie in [0, {n})")
    return np.array([np.dot(x_i[: n - d], x_j[d:]) / (n - d) for d in range(max_delay + 1)])


def channel_pairs(m: int) -> list[tuple[int, int]]:
    """Row order of the matrix: (0,0), (0,1), ..., (0,M-1), (1,0), ..., (M-1,M-1)."""
    return [(i, j) for i in range(m) for j in range(m)]


@dataclass(frozen=True)
class AcfMatrix:
    values: np.ndarray  # (M*M, D+1)
    n_channels: int
    max_delay: int
    channel_names: tuple[str, ...] = ()
    frame_rate_hz: float | None = None

    @property
    def channel_pairs(self) -> list[tuple[int, int]]:
        return channel_pairs(self.n_channels)

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape


def _is_standardized(data: np.ndarray, tol: float = 1e-6) -> bool:
    mean = data.mean(axis=1)
    std = data.std(axis=1)
    live = std > 0
    return bool(np.all(np.abs(mean) <= tol) and np.all(np.abs(std[live] - 1.0) <= tol))


def acf_matrix_from_array(x: np.ndarray, max_delay: int) -> np.ndarray:
    """Raw (M*M, D+1) correlation values for an M x N array; no checks on scaling."""
    x = np.asarray(x, dtype=np.float64)
    m, n = x.shape
    if not 0 <= max_delay < n:
        raise ValueError(f"max delay {max_delay} must lie in [0, {n}) for {n} frames")
    out = np.empty((m * m, max_delay + 1))
    for d in range(max_delay + 1):
        c = x[:, : n - d] @ x[:, d:].T
        if d == 0:
            # BLAS does not promise a bit-symmetric Gram matrix.
            c = np.triu(c) + np.triu(c, 1).T
        out[:, d] = c.ravel() / (n - d)
    return out


def acf_matrix(cs: ChannelSeries, max_delay: int = 50) -> AcfMatrix:
    """Stack delayed auto- and cross-correlations for every ordered channel pair."""
    if not 0 <= max_delay < cs.n_frames:
        raise ValueError(f"max delay {max_delay} must lie in [0, {cs.n_frames}) for this series")
    if not _is_standardized(cs.data):
        warnings.warn("channel series is not standardized; correlations are unnormalized",
                      ContractWarning, stacklevel=2)
    values = acf_matrix_from_array(cs.data, max_delay)
    return AcfMatrix(values, cs.n_channels, max_delay, cs.channel_names, cs.frame_rate_hz)


@dataclass(frozen=True)
class AcfStandardizer:
    mean: np.ndarray
    std: np.ndarray
    fitted_on: int

    def apply(self, m: AcfMatrix | np.ndarray):
        return apply_acf_standardizer(self, m)


def _values(m) -> np.ndarray:
    return m.values if isinstance(m, AcfMatrix) else np.asarray(m, dtype=np.float64)


def fit_acf_standardizer(train: Sequence[AcfMatrix | np.ndarray]) -> AcfStandardizer:
    """Element-wise mean and population std over the training matrices."""
    if len(train) < 2:
        raise ValueError("fitting a standardizer needs at least two matrices")
    shapes = {_values(m).shape for m in train}
    if len(shapes) != 1:
        raise ValueError(f"training matrices differ in shape: {sorted(shapes)}")
    stack = np.stack([_values(m) for m in train])
    mean = stack.mean(axis=0)
    std = np.maximum(stack.std(axis=0), STD_FLOOR)
    return AcfStandardizer(mean, std, len(train))


def apply_acf_standardizer(s: AcfStandardizer, m: AcfMatrix | np.ndarray):
    """``(m - mean) / std``; also accepts a stack of matrices along a leading axis."""
    v = _values(m)
    if v.shape[-2:] != s.mean.shape or v.ndim not in (2, 3):
        raise ValueError(f"matrix shape {v.shape} does not match standardizer {s.mean.shape}")
    out = (v - s.mean) / s.std
    if isinstance(m, AcfMatrix):
        return AcfMatrix(out, m.n_channels, m.max_delay, m.channel_names, m.frame_rate_hz)
    return out


# -- CSV persistence ----------------------------------------------------------

def format_acf_csv(a: AcfMatrix) -> str:
    buf = io.StringIO()
    buf.write(f"# n_channels={a.n_channels}\n")
    buf.write(f"# max_delay={a.max_delay}\n")
    buf.write("# pair_order=row-major (i,j), i outer\n")
    if a.channel_names:
        buf.write(f"# channel_names={'|'.join(a.channel_names)}\n")
    if a.frame_rate_hz is not None:
        buf.write(f"# frame_rate_hz={a.frame_rate_hz!r}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["i", "j"] + [f"d{d}" for d in range(a.max_delay + 1)])
    for (i, j), row in zip(a.channel_pairs, a.values):
        w.writerow([i, j] + [repr(float(v)) for v in row])
    return buf.getvalue()


def write_acf_csv(path: str | Path, a: AcfMatrix) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write(format_acf_csv(a))


def read_acf_csv(path: str | Path) -> AcfMatrix:
    meta: dict[str, str] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    k = 0
    while k < len(lines) and lines[k].startswith("#"):
        key, _, value = lines[k][1:].strip().partition("=")
        meta[key.strip()] = value.strip()
        k += 1
    try:
        m, d = int(meta["n_channels"]), int(meta["max_delay"])
    except (KeyError, ValueError):
        raise FormatError(f"{path}: missing n_channels/max_delay metadata") from None
    rows = list(csv.reader(lines[k + 1:]))
    rows = [r for r in rows if r]
    if len(rows) != m * m:
        raise FormatError(f"{path}: expected {m * m} rows, found {len(rows)}")
    values = np.empty((m * m, d + 1))
    for r, (row, (i, j)) in enumerate(zip(rows, channel_pairs(m))):
        if (int(row[0]), int(row[1])) != (i, j) or len(row) != d + 3:
            raise FormatError(f"{path}: row {r} out of order or wrong width")
        values[r] = [float(v) for v in row[2:]]
    names = tuple(meta["channel_names"].split("|")) if meta.get("channel_names") else ()
    fr = float(meta["frame_rate_hz"]) if "frame_rate_hz" in meta else None
    return AcfMatrix(values, m, d, names, fr)
