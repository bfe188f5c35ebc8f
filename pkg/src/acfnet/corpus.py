"""Severity labels, speaker-disjoint splits, and segmentation rules."""

from __future__ import annotations

import csv
import enum
import logging
import math
from collections import Counter, defaultdict
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import FormatError, SplitError

log = logging.getLogger(__name__)


class Scale(str, enum.Enum):
    HAMD = "HAMD"
    QIDS = "QIDS"


class SeverityClass(enum.IntEnum):
    NORMAL = 0
    MODERATE = 1
    SEVERE = 2

    @property
    def short(self) -> str:
        return "NMS"[self.value]

    @classmethod
    def parse(cls, text: str) -> "SeverityClass":
        key = text.strip().upper()
        for c in cls:
            if key in (c.name, c.short):
                return c
        raise ValueError(f"unknown severity class {text!r}")


class Split(str, enum.Enum):
    TRAIN = "train"
    VALIDATION = "validation"
    TEST = "test"

    @classmethod
    def parse(cls, text: str) -> "Split":
        key = text.strip().lower()
        aliases = {"val": "validation", "valid": "validation", "dev": "validation"}
        return cls(aliases.get(key, key))


# Inclusive (lo, hi) score interval per severity level 1..5.
LEVEL_INTERVALS: dict[Scale, tuple[tuple[int, int], ...]] = {
    Scale.HAMD: ((0, 7), (8, 13), (14, 18), (19, 22), (23, 52)),
    Scale.QIDS: ((0, 5), (6, 10), (11, 15), (16, 20), (21, 27)),
}

LEVEL_NAMES = ("Normal", "Mild", "Moderate", "Severe", "Very Severe")


@dataclass(frozen=True)
class ScaleScore:
    scale: Scale
    score: int

    def __post_init__(self):
        object.__setattr__(self, "scale", Scale(self.scale))
        hi = LEVEL_INTERVALS[self.scale][-1][1]
        if isinstance(self.score, bool) or int(self.score) != self.score:
            raise ValueError(f"{self.scale.value} score must be an integer, got {self.score!r}")
        if not 0 <= self.score <= hi:
            raise ValueError(f"{self.scale.value} score {self.score} outside 0..{hi}")


@dataclass
class SessionRecord:
    session_id: str
    speaker_id: str
    scores: list[ScaleScore]
    severity: SeverityClass | None
    split: Split | None
    path: str
    duration_s: float

    def score_of(self, scale: Scale) -> int | None:
        for s in self.scores:
            if s.scale == scale:
                return s.score
        return None


@dataclass(frozen=True)
class SegmentRecord:
    session_id: str
    index: int
    start_s: float
    end_s: float
    severity: SeverityClass

    @property
    def duration_s(self) -> float:
        return self.end_s - self.start_s


def severity_from_scale(score: ScaleScore) -> int:
    """Severity level (1..5) whose closed interval contains the score."""
    for level, (lo, hi) in enumerate(LEVEL_INTERVALS[score.scale], start=1):
        if lo <= score.score <= hi:
            return level
    raise ValueError(f"{score.scale.value} score {score.score} outside the scale range")


def class_from_level(level: int) -> SeverityClass:
    if level == 1:
        return SeverityClass.NORMAL
    if level in (2, 3):
        return SeverityClass.MODERATE
    if level in (4, 5):
        return SeverityClass.SEVERE
    raise ValueError(f"severity level must be in 1..5, got {level}")


def admit_session(scores: Sequence[ScaleScore]) -> SeverityClass | None:
    """Class for a session, or None when two scales disagree on the level.

    Agreement is checked on the five-level scale, not on the collapsed class.
    """
    if not scores:
        raise ValueError("a session needs at least one scale score")
    if len(scores) > 2 or len({s.scale for s in scores}) != len(scores):
        raise ValueError("at most one score per scale is allowed")
    levels = {severity_from_scale(s) for s in scores}
    if len(levels) > 1:
        return None
    return class_from_level(levels.pop())


def _largest_remainder(total: int, ratios: Sequence[float]) -> list[int]:
    raw = [total * r for r in ratios]
    counts = [math.floor(x) for x in raw]
    order = sorted(range(len(raw)), key=lambda k: (-(raw[k] - counts[k]), k))
    for k in order[: total - sum(counts)]:
        counts[k] += 1
    return counts


def split_speakers(
    sessions: Sequence[SessionRecord],
    ratios: Sequence[float] = (0.6, 0.2, 0.2),
    seed: int = 0,
) -> dict[str, Split]:
    """Assign every speaker to one split, stratified by class.

    Speakers are grouped by their modal class, shuffled inside each group and
    laid out Normal, Moderate, Severe. That list is dealt to the split with the
    largest shortfall against its target, which spreads every class across the
    splits in proportion to the ratios.
    """
    if len(ratios) != 3 or any(r < 0 for r in ratios) or not math.isclose(sum(ratios), 1.0):
        raise ValueError(f"ratios must be three non-negative numbers summing to 1, got {ratios}")
    by_speaker: dict[str, Counter] = defaultdict(Counter)
    for s in sessions:
        if s.severity is None:
            raise ValueError(f"session {s.session_id} has no class")
        by_speaker[s.speaker_id][s.severity] += 1
    n = len(by_speaker)
    if n < 3:
        raise SplitError(f"need at least 3 speakers for a three-way split, got {n}")

    targets = _largest_remainder(n, ratios)
    # Every split with a positive ratio gets at least one speaker.
    for k, r in enumerate(ratios):
        if r > 0 and targets[k] == 0:
            donor = max(range(3), key=lambda j: (targets[j], -j))
            if targets[donor] <= 1:
                raise SplitError("not enough speakers to populate every split")
            targets[donor] -= 1
            targets[k] += 1

    rng = np.random.default_rng(seed)
    ordered: list[str] = []
    for cls in SeverityClass:
        group = sorted(
            spk for spk, counts in by_speaker.items()
            if max(counts.items(), key=lambda kv: (kv[1], -kv[0]))[0] == cls
        )
        ordered.extend(group[i] for i in rng.permutation(len(group)))

    splits = list(Split)
    counts = [0, 0, 0]
    assignment: dict[str, Split] = {}
    for k, spk in enumerate(ordered, start=1):
        open_ = [j for j in range(3) if counts[j] < targets[j]]
        j = max(open_, key=lambda j: (targets[j] * k / n - counts[j], -j))
        counts[j] += 1
        assignment[spk] = splits[j]
    return assignment


def split_class_shares(
    sessions: Sequence[SessionRecord], assignment: dict[str, Split]
) -> dict[Split, np.ndarray]:
    """Per-split session class proportions (Normal, Moderate, Severe)."""
    out = {}
    for sp in Split:
        counts = np.zeros(3)
        for s in sessions:
            if assignment.get(s.speaker_id) == sp:
                counts[int(s.severity)] += 1
        out[sp] = counts / counts.sum() if counts.sum() else counts
    return out


def _test_segment_count(duration_s: float, target_s: float, min_s: float) -> int:
    best_n, best_gap = 1, abs(duration_s - target_s)
    n = 2
    while duration_s / n >= min_s:
        gap = abs(duration_s / n - target_s)
        if gap <= best_gap:
            best_n, best_gap = n, gap
        n += 1
    return best_n


def segment_recording(
    duration_s: float,
    split: Split,
    window_s: float = 20.0,
    shift_s: float = 5.0,
    min_s: float = 10.0,
) -> list[tuple[float, float]]:
    """Segment boundaries in seconds for one recording.

    Train and validation recordings get sliding 20 s windows every 5 s (shorter
    ones are used whole). Test recordings are cut into equal, non-overlapping
    pieces whose length is closest to 20 s, preferring more pieces on ties.
    """
    if not duration_s > 0:
        raise ValueError(f"duration must be positive, got {duration_s}")
    split = Split(split)
    if duration_s < min_s:
        return []
    if split is Split.TEST:
        n = _test_segment_count(duration_s, window_s, min_s)
        step = duration_s / n
        return [(k * step, duration_s if k == n - 1 else (k + 1) * step) for k in range(n)]
    if duration_s <= window_s:
        return [(0.0, duration_s)]
    out = []
    k = 0
    # Tolerance absorbs float noise in durations read from text.
    while k * shift_s + window_s <= duration_s + 1e-9:
        out.append((k * shift_s, k * shift_s + window_s))
        k += 1
    return out


def segment_sessions(sessions: Iterable[SessionRecord]) -> dict[str, list[SegmentRecord]]:
    """Segment every admitted session; sessions with no usable segment are dropped."""
    out: dict[str, list[SegmentRecord]] = {}
    for s in sessions:
        if s.severity is None or s.split is None:
            continue
        bounds = segment_recording(s.duration_s, s.split)
        if not bounds:
            log.info("dropping session %s: %.2f s yields no segment", s.session_id, s.duration_s)
            continue
        out[s.session_id] = [
            SegmentRecord(s.session_id, k, a, b, s.severity) for k, (a, b) in enumerate(bounds)
        ]
    return out


# -- manifest I/O -------------------------------------------------------------

MANIFEST_FIELDS = ("session_id", "speaker_id", "split", "hamd", "qids", "duration_s", "path")


def _opt_int(text: str | None) -> int | None:
    if text is None or text.strip() == "":
        return None
    return int(text)


def read_manifest(path: str | Path) -> list[SessionRecord]:
    """Parse a corpus manifest and derive each session's class.

    Sessions whose two scales disagree keep ``severity=None``; callers drop them.
    """
    path = Path(path)
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        missing = {"session_id", "speaker_id", "duration_s", "path"} - set(reader.fieldnames or ())
        if missing:
            raise FormatError(f"{path}: manifest is missing columns {sorted(missing)}")
        records = []
        for line, row in enumerate(reader, start=2):
            try:
                scores = []
                for col, scale in (("hamd", Scale.HAMD), ("qids", Scale.QIDS)):
                    v = _opt_int(row.get(col))
                    if v is not None:
                        scores.append(ScaleScore(scale, v))
                split = row.get("split") or ""
                records.append(
                    SessionRecord(
                        session_id=row["session_id"],
                        speaker_id=row["speaker_id"],
                        scores=scores,
                        severity=admit_session(scores) if scores else None,
                        split=Split.parse(split) if split.strip() else None,
                        path=row["path"],
                        duration_s=float(row["duration_s"]),
                    )
                )
            except ValueError as exc:
                raise FormatError(f"{path}:{line}: {exc}") from exc
    return records


def write_manifest(path: str | Path, sessions: Sequence[SessionRecord]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(MANIFEST_FIELDS)
        for s in sessions:
            hamd, qids = s.score_of(Scale.HAMD), s.score_of(Scale.QIDS)
            w.writerow([
                s.session_id,
                s.speaker_id,
                s.split.value if s.split else "",
                "" if hamd is None else hamd,
                "" if qids is None else qids,
                repr(float(s.duration_s)),
                s.path,
            ])


def assign_splits(
    sessions: Sequence[SessionRecord], ratios=(0.6, 0.2, 0.2), seed: int = 0
) -> list[SessionRecord]:
    """Admitted sessions with a split filled in.

    Manifest splits are kept when every admitted session has one; otherwise
    the whole set is re-split by speaker.
    """
    admitted = []
    for s in sessions:
        if s.severity is None:
            log.info("excluding session %s: scales disagree or no score", s.session_id)
            continue
        admitted.append(s)
    if admitted and all(s.split is not None for s in admitted):
        spk_splits: dict[str, set] = defaultdict(set)
        for s in admitted:
            spk_splits[s.speaker_id].add(s.split)
        bad = sorted(k for k, v in spk_splits.items() if len(v) > 1)
        if bad:
            raise SplitError(f"speakers appear in more than one split: {bad}")
        return admitted
    assignment = split_speakers(admitted, ratios, seed)
    return [replace(s, split=assignment[s.speaker_id]) for s in admitted]
