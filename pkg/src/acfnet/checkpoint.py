"""Single-file checkpoint container.

Layout (little-endian throughout)::

    8 bytes   magic b"ACFNCKPT"
    u32       format version
    u64       metadata length, then UTF-8 JSON metadata
    u64       array count, then per array:
                u64 name length, UTF-8 name
                u8  dtype code (0 float32, 1 float64, 2 int64)
                u64 ndim, ndim x u64 dims
                u64 byte length, raw little-endian data
    32 bytes  SHA-256 of everything above
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .acf import AcfStandardizer
from .autodiff.optim import AdamState
from .errors import IntegrityError, VersionError

MAGIC = b"ACFNCKPT"
FORMAT_VERSION = 1
_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8"), 2: np.dtype("<i8")}
_CODES = {np.dtype("float32"): 0, np.dtype("float64"): 1, np.dtype("int64"): 2}


def encode_container(meta: dict, arrays: dict[str, np.ndarray], version: int = FORMAT_VERSION) -> bytes:
    parts = [MAGIC, struct.pack("<I", version)]
    blob = json.dumps(meta, sort_keys=True, separators=(",", ":")).encode("utf-8")
    parts += [struct.pack("<Q", len(blob)), blob, struct.pack("<Q", len(arrays))]
    for name in sorted(arrays):
        arr = np.asarray(arrays[name])
        code = _CODES.get(arr.dtype)
        if code is None:
            raise TypeError(f"array {name!r} has unsupported dtype {arr.dtype}")
        data = np.ascontiguousarray(arr, dtype=_DTYPES[code]).tobytes()
        key = name.encode("utf-8")
        parts += [struct.pack("<Q", len(key)), key, struct.pack("<BQ", code, arr.ndim)]
        parts += [struct.pack("<Q", d) for d in arr.shape]
        parts += [struct.pack("<Q", len(data)), data]
    body = b"".join(parts)
    return body + hashlib.sha256(body).digest()


def decode_container(raw: bytes) -> tuple[dict, dict[str, np.ndarray], int]:
    if len(raw) < len(MAGIC) + 4 or raw[: len(MAGIC)] != MAGIC:
        raise IntegrityError("not a checkpoint container (bad magic or truncated header)")
    (version,) = struct.unpack_from("<I", raw, len(MAGIC))
    if version != FORMAT_VERSION:
        raise VersionError(f"container format version {version}, this build reads {FORMAT_VERSION}")
    if len(raw) < 32 or hashlib.sha256(raw[:-32]).digest() != raw[-32:]:
        raise IntegrityError("checksum mismatch: file is truncated or corrupted")
    body = raw[:-32]
    try:
        pos = len(MAGIC) + 4
        (n,) = struct.unpack_from("<Q", body, pos)
        pos += 8
        meta = json.loads(body[pos:pos + n].decode("utf-8"))
        pos += n
        (count,) = struct.unpack_from("<Q", body, pos)
        pos += 8
        arrays = {}
        for _ in range(count):
            (n,) = struct.unpack_from("<Q", body, pos)
            pos += 8
            name = body[pos:pos + n].decode("utf-8")
            pos += n
            code, ndim = struct.unpack_from("<BQ", body, pos)
            pos += 9
            dims = struct.unpack_from(f"<{ndim}Q", body, pos)
            pos += 8 * ndim
            (nbytes,) = struct.unpack_from("<Q", body, pos)
            pos += 8
            dt = _DTYPES[code]
            arrays[name] = np.frombuffer(body[pos:pos + nbytes], dtype=dt).reshape(dims).copy()
            pos += nbytes
        if pos != len(body):
            raise IntegrityError("trailing bytes after the last array")
    except (struct.error, KeyError, ValueError, UnicodeDecodeError) as exc:
        raise IntegrityError(f"malformed container: {exc}") from exc
    return meta, arrays, version


def write_container(path, meta: dict, arrays: dict[str, np.ndarray], version: int = FORMAT_VERSION) -> None:
    Path(path).write_bytes(encode_container(meta, arrays, version))


def read_container(path) -> tuple[dict, dict[str, np.ndarray]]:
    meta, arrays, _ = decode_container(Path(path).read_bytes())
    return meta, arrays


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_loss: float
    val_uar: float
    learning_rate: float


@dataclass
class History:
    epochs: list[EpochRecord] = field(default_factory=list)
    best_epoch: int | None = None
    stopped_early: bool = False

    def column(self, name: str) -> list:
        return [getattr(e, name) for e in self.epochs]

    def to_dict(self) -> dict:
        return {"epochs": [asdict(e) for e in self.epochs], "best_epoch": self.best_epoch,
                "stopped_early": self.stopped_early}

    @classmethod
    def from_dict(cls, d: dict) -> "History":
        return cls([EpochRecord(**e) for e in d["epochs"]], d.get("best_epoch"), d.get("stopped_early", False))

    def to_csv(self) -> str:
        lines = ["epoch,train_loss,val_loss,val_uar,learning_rate"]
        for e in self.epochs:
            lines.append(f"{e.epoch},{e.train_loss!r},{e.val_loss!r},{e.val_uar!r},{e.learning_rate!r}")
        return "\n".join(lines) + "\n"


@dataclass
class Checkpoint:
    kind: str
    config: dict
    state: dict[str, np.ndarray]
    precision: int = 32
    seed: int = 0
    standardizer: AcfStandardizer | None = None
    adam: AdamState | None = None
    history: History | None = None
    extra: dict = field(default_factory=dict)


def checkpoint_to_container(ck: Checkpoint) -> tuple[dict, dict[str, np.ndarray]]:
    meta = {"kind": ck.kind, "config": ck.config, "precision": ck.precision, "seed": ck.seed,
            "history": ck.history.to_dict() if ck.history else None, "extra": ck.extra}
    arrays = {f"state/{k}": v for k, v in ck.state.items()}
    if ck.standardizer is not None:
        meta["standardizer"] = {"fitted_on": ck.standardizer.fitted_on}
        arrays["standardizer/mean"] = ck.standardizer.mean
        arrays["standardizer/std"] = ck.standardizer.std
    if ck.adam is not None:
        a = ck.adam
        meta["adam"] = {"learning_rate": a.learning_rate, "beta1": a.beta1, "beta2": a.beta2,
                        "eps": a.eps, "step": a.step}
        arrays.update({f"adam/m/{k}": v for k, v in a.m.items()})
        arrays.update({f"adam/v/{k}": v for k, v in a.v.items()})
    return meta, arrays


def save_checkpoint(path, ck: Checkpoint, version: int = FORMAT_VERSION) -> None:
    meta, arrays = checkpoint_to_container(ck)
    write_container(path, meta, arrays, version)


def load_checkpoint(path) -> Checkpoint:
    meta, arrays = read_container(path)

    def group(prefix):
        return {k[len(prefix):]: v for k, v in arrays.items() if k.startswith(prefix)}

    std = None
    if "standardizer" in meta:
        std = AcfStandardizer(arrays["standardizer/mean"], arrays["standardizer/std"],
                              meta["standardizer"]["fitted_on"])
    adam = None
    if "adam" in meta:
        adam = AdamState(**meta["adam"], m=group("adam/m/"), v=group("adam/v/"))
    hist = History.from_dict(meta["history"]) if meta.get("history") else None
    return Checkpoint(meta["kind"], meta["config"], group("state/"), meta["precision"], meta["seed"],
                      std, adam, hist, meta.get("extra", {}))
