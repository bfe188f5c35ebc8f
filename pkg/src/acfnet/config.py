"""INI pipeline configuration with exhaustive validation.

Example::

    [paths]
    manifest = corpus/manifest.csv
    work_dir = .

    [features]
    source = synthetic        ; synthetic | tv | formant | egemaps (CSV ingest) or mfcc (WAV)
    channels = 8

    [acf]
    max_delay = 50

    [split]
    ratios = 0.6, 0.2, 0.2

    [segment_model]
    preset = tv               ; any DilatedCnnConfig field may be overridden here

    [session_model]
    preset = tv

    [train_segment]
    learning_rate = 2e-5

    [train_session]
    learning_rate = lstm
    batch_size = 16

    [seeds]
    seed = 0

Relative paths resolve against the config file's directory.
"""

from __future__ import annotations

import configparser
import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

from .models import (DILATED_PRESETS, LSTM_PRESETS, BaselineCnnConfig, DilatedCnnConfig,
                     SessionLstmConfig)
from .training import TrainConfig

FEATURE_SOURCES = ("synthetic", "tv", "formant", "egemaps", "mfcc")
CONFIG_NAME = "config.ini"
# Sessions are far fewer than segments; a batch of 128 would leave the LSTM one
# update per epoch on a desk-scale corpus.
SESSION_BATCH_SIZE = 16


@dataclass
class PipelineConfig:
    manifest: Path
    work_dir: Path
    source: str = "synthetic"
    channels: int = 8
    max_delay: int = 50
    ratios: tuple[float, float, float] = (0.6, 0.2, 0.2)
    segment_model: dict = field(default_factory=lambda: dict(DILATED_PRESETS["tv"]))
    session_model: dict = field(default_factory=lambda: dict(LSTM_PRESETS["tv"]))
    baseline_model: dict = field(default_factory=dict)
    train_segment: dict = field(default_factory=dict)
    train_session: dict = field(default_factory=lambda: {"learning_rate": "lstm",
                                                         "batch_size": SESSION_BATCH_SIZE})
    train_baseline: dict = field(default_factory=dict)
    seed: int = 0
    path: Path | None = None

    @property
    def corpus_dir(self) -> Path:
        return self.manifest.parent

    def dilated_config(self) -> DilatedCnnConfig:
        d = dict(self.segment_model)
        d.setdefault("n_channels", self.channels)
        d.setdefault("max_delay", self.max_delay)
        return DilatedCnnConfig.from_dict(d)

    def lstm_config(self, input_size: int) -> SessionLstmConfig:
        return SessionLstmConfig.from_dict({**self.session_model, "input_size": input_size})

    def baseline_config(self, input_frames: int) -> BaselineCnnConfig:
        d = {"input_channels": self.channels, "input_frames": input_frames, **self.baseline_model}
        return BaselineCnnConfig.from_dict(d)

    def train_config(self, stage: str, seed: int | None = None, precision: int = 32) -> TrainConfig:
        d = dict(getattr(self, f"train_{stage}"))
        return TrainConfig(**d, seed=self.seed if seed is None else seed, precision=precision)


_SCALAR_SECTIONS = ("segment_model", "session_model", "baseline_model",
                    "train_segment", "train_session", "train_baseline")
_TRAIN_FIELDS = {"learning_rate", "max_epochs", "patience", "batch_size", "class_weights", "restore_best"}


def _coerce(text: str):
    """INI value to int, float, bool, tuple or string."""
    t = text.strip()
    if "," in t:
        return tuple(_coerce(p) for p in t.split(",") if p.strip())
    for cast in (int, float):
        try:
            return cast(t)
        except ValueError:
            pass
    if t.lower() in ("true", "false"):
        return t.lower() == "true"
    return t


def _format(v) -> str:
    if isinstance(v, (tuple, list)):
        return ", ".join(_format(x) for x in v)
    return str(v)


def _read_parser(path: Path) -> configparser.ConfigParser:
    cp = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    with open(path, encoding="utf-8") as fh:  # surfaces OSError for unreadable files
        cp.read_file(fh)
    return cp


def _parse(cp: configparser.ConfigParser, base: Path, problems: list[str]) -> PipelineConfig:
    def get(section, key, default, cast=str):
        if not cp.has_option(section, key):
            return default
        raw = cp.get(section, key)
        try:
            return cast(raw)
        except ValueError:
            problems.append(f"[{section}] {key}: cannot read {raw!r} as {cast.__name__}")
            return default

    manifest = cp.get("paths", "manifest", fallback=None)
    if manifest is None:
        problems.append("[paths] manifest is missing")
        manifest = "corpus/manifest.csv"
    work = cp.get("paths", "work_dir", fallback=".")
    cfg = PipelineConfig(manifest=(base / manifest).resolve(), work_dir=(base / work).resolve())
    cfg.source = get("features", "source", cfg.source).strip().lower()
    cfg.channels = get("features", "channels", cfg.channels, int)
    cfg.max_delay = get("acf", "max_delay", cfg.max_delay, int)
    cfg.seed = get("seeds", "seed", cfg.seed, int)
    ratios = get("split", "ratios", None)
    if ratios is not None:
        try:
            cfg.ratios = tuple(float(r) for r in ratios.split(","))
        except ValueError:
            problems.append(f"[split] ratios: cannot read {ratios!r} as numbers")

    for section in _SCALAR_SECTIONS:
        if not cp.has_section(section):
            continue
        values = {k: _coerce(v) for k, v in cp.items(section)}
        preset = values.pop("preset", None)
        if preset is not None:
            table = DILATED_PRESETS if section == "segment_model" else LSTM_PRESETS
            if section not in ("segment_model", "session_model") or preset not in table:
                problems.append(f"[{section}] unknown preset {preset!r}")
            else:
                values = {**table[preset], **values}
        elif section in ("segment_model", "session_model"):
            values = {**getattr(cfg, section), **values}
        if section.startswith("train_"):
            values = {**getattr(cfg, section), **values}
        setattr(cfg, section, values)
    cfg.path = None
    return cfg


def _model_problems(cfg: PipelineConfig) -> list[str]:
    out = []
    for section, cls in (("segment_model", DilatedCnnConfig), ("session_model", SessionLstmConfig),
                         ("baseline_model", BaselineCnnConfig)):
        known = {f.name for f in dataclasses.fields(cls)}
        for key in sorted(set(getattr(cfg, section)) - known):
            out.append(f"[{section}] unknown key {key!r}")
    try:
        cfg.dilated_config()
    except (ValueError, TypeError) as exc:
        out.append(f"[segment_model] {exc}")
    try:
        cfg.lstm_config(64)
    except (ValueError, TypeError) as exc:
        out.append(f"[session_model] {exc}")
    for stage in ("segment", "session", "baseline"):
        d = getattr(cfg, f"train_{stage}")
        for key in sorted(set(d) - _TRAIN_FIELDS):
            out.append(f"[train_{stage}] unknown key {key!r}")
        try:
            TrainConfig(**{k: v for k, v in d.items() if k in _TRAIN_FIELDS})
        except (ValueError, TypeError) as exc:
            out.append(f"[train_{stage}] {exc}")
    return out


def shortest_segment_frames(cfg: PipelineConfig) -> tuple[int, str] | None:
    """Frame count of the shortest segment the manifest will produce, with its session id."""
    from .corpus import assign_splits, read_manifest, segment_recording

    records = assign_splits(read_manifest(cfg.manifest), cfg.ratios, cfg.seed)
    best = None
    for r in records:
        segs = segment_recording(r.duration_s, r.split)
        if not segs:
            continue
        fr = 100.0 if cfg.source == "mfcc" else _csv_frame_rate(cfg.corpus_dir / r.path)
        n = min(int(round(b * fr)) - int(round(a * fr)) for a, b in segs)
        if best is None or n < best[0]:
            best = (n, r.session_id)
    return best


def _csv_frame_rate(path: Path) -> float:
    """Frame rate from a feature CSV's leading metadata lines."""
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if not line.startswith("#"):
                break
            key, _, value = line[1:].strip().partition("=")
            if key.strip() == "frame_rate_hz":
                return float(value)
    raise ValueError(f"{path}: no frame_rate_hz metadata")


def validate_config(path: str | Path) -> list[str]:
    """Every schema and cross-field violation in the config file (empty list when valid)."""
    path = Path(path)
    problems: list[str] = []
    try:
        cp = _read_parser(path)
    except configparser.Error as exc:
        return [f"malformed config: {exc}"]
    cfg = _parse(cp, path.parent, problems)
    if cfg.source not in FEATURE_SOURCES:
        problems.append(f"[features] source must be one of {', '.join(FEATURE_SOURCES)}, got {cfg.source!r}")
    if cfg.channels < 1:
        problems.append("[features] channels must be at least 1")
    if cfg.source == "mfcc" and cfg.channels != 12:
        problems.append("[features] mfcc produces 12 channels; set channels = 12")
    if cfg.max_delay < 0:
        problems.append("[acf] max_delay must be non-negative")
    if len(cfg.ratios) != 3 or any(r < 0 for r in cfg.ratios) or abs(sum(cfg.ratios) - 1) > 1e-9:
        problems.append(f"[split] ratios must be three non-negative numbers summing to 1, got {cfg.ratios}")
    if cfg.seed < 0:
        problems.append("[seeds] seed must be non-negative")
    problems += _model_problems(cfg)
    if not cfg.manifest.is_file():
        problems.append(f"[paths] manifest not found: {cfg.manifest}")
    elif not any("split" in p or "manifest" in p for p in problems):
        try:
            shortest = shortest_segment_frames(cfg)
        except (OSError, ValueError) as exc:
            problems.append(f"[paths] manifest unusable: {exc}")
        else:
            if shortest is not None and cfg.max_delay >= shortest[0]:
                problems.append(f"[acf] max_delay {cfg.max_delay} must be below the shortest segment's "
                                f"{shortest[0]} frames (session {shortest[1]})")
    return problems


def load_config(path: str | Path) -> PipelineConfig:
    """Parse a config file; raises ValueError listing every violation."""
    problems = validate_config(path)
    if problems:
        raise ValueError("invalid config:\n  " + "\n  ".join(problems))
    cfg = _parse(_read_parser(Path(path)), Path(path).parent, [])
    cfg.path = Path(path).resolve()
    return cfg


def render_config(manifest: str, work_dir: str = ".", source: str = "synthetic", channels: int = 8,
                  seed: int = 0, max_delay: int = 50, preset: str = "tv") -> str:
    cp = configparser.ConfigParser()
    cp["paths"] = {"manifest": manifest, "work_dir": work_dir}
    cp["features"] = {"source": source, "channels": str(channels)}
    cp["acf"] = {"max_delay": str(max_delay)}
    cp["split"] = {"ratios": "0.6, 0.2, 0.2"}
    cp["segment_model"] = {"preset": preset}
    cp["session_model"] = {"preset": preset}
    cp["train_segment"] = {"learning_rate": "2e-5", "max_epochs": "300", "patience": "15", "batch_size": "128"}
    cp["train_session"] = {"learning_rate": "lstm", "max_epochs": "300", "patience": "15",
                           "batch_size": str(SESSION_BATCH_SIZE)}
    cp["seeds"] = {"seed": str(seed)}
    lines = []
    for section in cp.sections():
        lines.append(f"[{section}]")
        lines += [f"{k} = {_format(v)}" for k, v in cp[section].items()]
        lines.append("")
    return "\n".join(lines)
