"""In-memory building blocks for the two-stage pipeline.

The CLI wraps these with on-disk artifacts; tests call them directly.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .acf import AcfStandardizer, acf_matrix, apply_acf_standardizer, fit_acf_standardizer
from .corpus import SegmentRecord, SessionRecord, Split, segment_sessions
from .dsp import ChannelSeries, ingest_feature_csv, slice_segment, standardize_channels
from .evaluation import Prediction, plurality_vote
from .autodiff.ops import softmax
from .models import SessionLstm

log = logging.getLogger(__name__)


@dataclass
class SessionData:
    """One session's segments and their raw (dataset-unstandardized) ACFs."""

    record: SessionRecord
    segments: list[SegmentRecord]
    acfs: list[np.ndarray]

    @property
    def label(self) -> int:
        return int(self.record.severity)


def session_acfs(cs: ChannelSeries, segments: Sequence[SegmentRecord], max_delay: int) -> list[np.ndarray]:
    """Per-segment ACF matrices; each segment is z-scored on its own first."""
    out = []
    for seg in segments:
        piece = standardize_channels(slice_segment(cs, seg.start_s, seg.end_s))
        if max_delay >= piece.n_frames:
            raise ValueError(f"segment {seg.session_id}#{seg.index} has {piece.n_frames} frames, "
                             f"not more than max_delay {max_delay}")
        out.append(acf_matrix(piece, max_delay).values)
    return out


def load_sessions(
    corpus_dir: str | Path,
    records: Sequence[SessionRecord],
    max_delay: int = 50,
    expected_channels: int | None = None,
    workers: int = 1,
    splits: Sequence[Split] | None = None,
) -> list[SessionData]:
    """Read, segment and ACF-transform sessions, preserving manifest order.

    Only sessions whose split is in ``splits`` are opened, so a training stage
    can be restricted to train and validation files.
    """
    corpus_dir = Path(corpus_dir)
    keep = [r for r in records if splits is None or r.split in set(splits)]
    segs = segment_sessions(keep)
    todo = [r for r in keep if r.session_id in segs]

    def work(r: SessionRecord) -> SessionData:
        cs = ingest_feature_csv(corpus_dir / r.path, expected_channels)
        return SessionData(r, segs[r.session_id], session_acfs(cs, segs[r.session_id], max_delay))

    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            return list(pool.map(work, todo))
    return [work(r) for r in todo]


def by_split(sessions: Sequence[SessionData], split: Split) -> list[SessionData]:
    return [s for s in sessions if s.record.split is split]


def stack_segments(sessions: Sequence[SessionData], standardizer: AcfStandardizer | None = None):
    """(X, y) over every segment of the given sessions."""
    if not sessions:
        raise ValueError("no sessions to stack")
    x = np.stack([a for s in sessions for a in s.acfs])
    y = np.array([s.label for s in sessions for _ in s.acfs], dtype=np.int64)
    if standardizer is not None:
        x = apply_acf_standardizer(standardizer, x)
    return x, y


def fit_standardizer(train_sessions: Sequence[SessionData]) -> AcfStandardizer:
    for s in train_sessions:
        if s.record.split is not Split.TRAIN:
            raise ValueError(f"standardizer must be fitted on training data only ({s.record.session_id})")
    return fit_acf_standardizer([a for s in train_sessions for a in s.acfs])


def segment_probabilities(model, sessions: Sequence[SessionData], standardizer) -> dict[str, np.ndarray]:
    """Softmax outputs of a segment CNN, one [segments, 3] array per session."""
    from .training import predict_logits

    out = {}
    for s in sessions:
        x = apply_acf_standardizer(standardizer, np.stack(s.acfs)) if standardizer else np.stack(s.acfs)
        logits, _ = predict_logits(model, x.astype(model.dtype))
        out[s.record.session_id] = softmax(logits.astype(np.float64))
    return out


def vote_predictions(
    sessions: Sequence[SessionData], probs: dict[str, np.ndarray], seed: int = 0, fraction: float = 0.5
) -> list[Prediction]:
    """Plurality-vote session predictions; ties draw from one seeded generator in session order."""
    rng = np.random.default_rng(seed)
    out = []
    for s in sessions:
        p = probs[s.record.session_id]
        pairs = [(int(np.argmax(r)), float(np.max(r))) for r in p]
        cls = plurality_vote(pairs, fraction, rng)
        conf = float(np.mean([c for k, c in pairs if k == cls]))
        out.append(Prediction(s.record.session_id, s.label, cls, conf))
    return out


def segment_predictions(sessions: Sequence[SessionData], probs: dict[str, np.ndarray]) -> list[Prediction]:
    out = []
    for s in sessions:
        for seg, p in zip(s.segments, probs[s.record.session_id]):
            out.append(Prediction(f"{s.record.session_id}#{seg.index}", s.label, int(np.argmax(p)),
                                  float(np.max(p))))
    return out


def lstm_predictions(model: SessionLstm, sessions: Sequence[SessionData],
                     embeddings: dict[str, np.ndarray]) -> list[Prediction]:
    from .training import session_probabilities

    seqs = [embeddings[s.record.session_id] for s in sessions]
    probs = session_probabilities(model, seqs)
    return [Prediction(s.record.session_id, s.label, int(np.argmax(p)), float(np.max(p)))
            for s, p in zip(sessions, probs)]
