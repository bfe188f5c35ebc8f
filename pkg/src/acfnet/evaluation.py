"""Classification metrics, plurality voting, and report tables."""

from __future__ import annotations

import csv
import io
import math
from collections import Counter, defaultdict
from dataclasses import dataclass
from fractions import Fraction
from html import escape
from typing import Iterable, Sequence

import numpy as np

CLASS_NAMES = ("Normal", "Moderate", "Severe")
K = len(CLASS_NAMES)


@dataclass(frozen=True)
class Prediction:
    id: str
    true: int
    predicted: int
    confidence: float = 1.0

    def __post_init__(self):
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError(f"confidence {self.confidence} outside [0, 1]")
        for v in (self.true, self.predicted):
            if not 0 <= int(v) < K:
                raise ValueError(f"class index {v} outside 0..{K - 1}")


def confusion(preds: Iterable[Prediction]) -> np.ndarray:
    """3 x 3 counts; rows are true classes, columns predicted (N, M, S)."""
    cm = np.zeros((K, K), dtype=np.int64)
    for p in preds:
        cm[int(p.true), int(p.predicted)] += 1
    return cm


@dataclass
class Metrics:
    accuracy: float
    uar: float
    recall: tuple[float, ...]
    precision: tuple[float, ...]
    f1: tuple[float, ...]
    f1_undefined: tuple[bool, ...]
    support: tuple[int, ...]

    def row(self) -> dict:
        out = {"accuracy": self.accuracy, "uar": self.uar}
        for name, v in zip("nms", self.f1):
            out[f"f1_{name}"] = v
        return out


def metrics(cm) -> Metrics:
    """Accuracy, unweighted average recall and per-class F1 from a confusion matrix.

    Classes without support are left out of the UAR and get F1 = NaN. A class
    that has support but is never predicted has undefined precision; its F1 is
    reported as 0 and flagged.
    """
    cm = np.asarray(cm, dtype=np.int64)
    if cm.shape != (K, K) or np.any(cm < 0):
        raise ValueError("confusion matrix must be 3 x 3 with non-negative counts")
    total = int(cm.sum())
    if total == 0:
        raise ValueError("confusion matrix is empty")
    support = cm.sum(axis=1)
    predicted = cm.sum(axis=0)
    diag = np.diag(cm)
    recall, precision, f1, undefined = [], [], [], []
    for c in range(K):
        r = diag[c] / support[c] if support[c] else math.nan
        p = diag[c] / predicted[c] if predicted[c] else math.nan
        recall.append(float(r))
        precision.append(float(p))
        if support[c] == 0:
            f1.append(math.nan)
            undefined.append(True)
        elif predicted[c] == 0:
            f1.append(0.0)
            undefined.append(True)
        else:
            # 2pr / (p + r) rewritten over counts so the float is correctly rounded.
            f1.append(float(2 * diag[c] / (support[c] + predicted[c])))
            undefined.append(False)
    live = [c for c in range(K) if support[c]]
    uar = sum(Fraction(int(diag[c]), int(support[c])) for c in live) / len(live)
    return Metrics(float(diag.sum() / total), float(uar), tuple(recall), tuple(precision),
                   tuple(f1), tuple(undefined), tuple(int(s) for s in support))


def metrics_from_predictions(preds: Sequence[Prediction]) -> Metrics:
    """Same quantities computed straight from the prediction list."""
    if not preds:
        raise ValueError("no predictions")
    total = len(preds)
    correct = sum(p.true == p.predicted for p in preds)
    recall, precision, f1, undefined, support = [], [], [], [], []
    for c in range(K):
        tp = sum(1 for p in preds if p.true == c and p.predicted == c)
        n_true = sum(1 for p in preds if p.true == c)
        n_pred = sum(1 for p in preds if p.predicted == c)
        r = tp / n_true if n_true else math.nan
        pr = tp / n_pred if n_pred else math.nan
        recall.append(r)
        precision.append(pr)
        support.append(n_true)
        if not n_true:
            f1.append(math.nan)
            undefined.append(True)
        elif not n_pred:
            f1.append(0.0)
            undefined.append(True)
        else:
            f1.append(2 * tp / (n_true + n_pred))
            undefined.append(False)
    tp_all = [sum(1 for p in preds if p.true == c == p.predicted) for c in range(K)]
    valid = [Fraction(t, n) for t, n in zip(tp_all, support) if n]
    return Metrics(correct / total, float(sum(valid) / len(valid)), tuple(recall), tuple(precision),
                   tuple(f1), tuple(undefined), tuple(support))


def chance_f1(supports: Sequence[int]) -> tuple[float, ...]:
    """Expected per-class F1 of a guesser that draws labels from the class prior.

    For such a guesser precision and recall of class c both equal its share.
    """
    s = np.asarray(supports, dtype=float)
    return tuple(float(v) for v in s / s.sum())


def plurality_vote(
    segment_preds: Sequence[tuple[int, float]],
    fraction: float = 0.5,
    rng: np.random.Generator | None = None,
) -> int:
    """Session class from its segments' (predicted class, confidence) pairs.

    The ceil(fraction * n) most confident segments vote (equal confidences keep
    segment order); a tie between modal classes is broken uniformly at random.
    """
    if not segment_preds:
        raise ValueError("no segment predictions to vote on")
    if not 0 < fraction <= 1:
        raise ValueError("fraction must be in (0, 1]")
    n = len(segment_preds)
    keep = math.ceil(fraction * n - 1e-12)
    order = sorted(range(n), key=lambda k: (-segment_preds[k][1], k))[:keep]
    counts = Counter(int(segment_preds[k][0]) for k in order)
    top = max(counts.values())
    tied = sorted(c for c, v in counts.items() if v == top)
    if len(tied) == 1:
        return tied[0]
    rng = rng if rng is not None else np.random.default_rng(0)
    return int(tied[int(rng.integers(len(tied)))])


@dataclass
class BucketRow:
    label: str
    lo: int
    hi: int | None
    support: int
    correct: int

    @property
    def accuracy(self) -> float:
        return self.correct / self.support


def accuracy_by_segment_count(
    session_preds: Sequence[Prediction],
    segment_counts: dict[str, int],
    edges: Sequence[int] = (1, 3, 5, 10),
) -> list[BucketRow]:
    """Session accuracy per segment-count bucket [edges[k], edges[k+1]); the last is open."""
    edges = list(edges)
    if edges != sorted(set(edges)) or edges[0] < 1:
        raise ValueError("bucket edges must be increasing and start at 1 or above")
    rows = []
    for k, lo in enumerate(edges):
        hi = edges[k + 1] if k + 1 < len(edges) else None
        label = f"{lo}+" if hi is None else (f"{lo}" if hi == lo + 1 else f"{lo}-{hi - 1}")
        rows.append(BucketRow(label, lo, hi, 0, 0))
    for p in session_preds:
        n = segment_counts[p.id]
        if n < 1:
            raise ValueError(f"session {p.id} has segment count {n}")
        for row in rows:
            if n >= row.lo and (row.hi is None or n < row.hi):
                row.support += 1
                row.correct += int(p.true == p.predicted)
                break
    return [r for r in rows if r.support]


@dataclass
class MisclassifiedRow:
    speaker_id: str
    session_id: str
    true: int
    predicted: int
    hamd: int | None
    qids: int | None


def misclassification_report(
    session_preds: Sequence[Prediction],
    sessions: dict[str, dict],
) -> list[MisclassifiedRow]:
    """Misclassified sessions grouped by speaker (most errors first).

    ``sessions`` maps session id to a dict with ``speaker_id``, ``hamd``, ``qids``.
    """
    by_speaker: dict[str, list[MisclassifiedRow]] = defaultdict(list)
    for p in session_preds:
        if p.true == p.predicted:
            continue
        info = sessions[p.id]
        by_speaker[info["speaker_id"]].append(
            MisclassifiedRow(info["speaker_id"], p.id, p.true, p.predicted, info.get("hamd"), info.get("qids")))
    out = []
    for spk in sorted(by_speaker, key=lambda s: (-len(by_speaker[s]), s)):
        out.extend(sorted(by_speaker[spk], key=lambda r: r.session_id))
    return out


# -- CSV writers --------------------------------------------------------------

METRICS_HEADER = ["model", "level", "features", "accuracy", "UAR", "F1(N)", "F1(M)", "F1(S)", "support"]


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return "nan" if math.isnan(v) else f"{v:.6f}"
    return str(v)


def metrics_csv(rows: Sequence[tuple[str, str, str, Metrics]]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(METRICS_HEADER)
    for model, level, features, m in rows:
        w.writerow([model, level, features, _fmt(m.accuracy), _fmt(m.uar)]
                   + [_fmt(v) for v in m.f1] + [sum(m.support)])
    return buf.getvalue()


def confusion_csv(cm: np.ndarray) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["true\\predicted", *CLASS_NAMES])
    for name, row in zip(CLASS_NAMES, cm):
        w.writerow([name, *[int(v) for v in row]])
    return buf.getvalue()


def predictions_csv(preds: Sequence[Prediction]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["id", "true", "predicted", "confidence"])
    for p in preds:
        w.writerow([p.id, CLASS_NAMES[p.true], CLASS_NAMES[p.predicted], f"{p.confidence:.6f}"])
    return buf.getvalue()


def buckets_csv(rows: Sequence[BucketRow]) -> str:
    lines = ["segments,sessions,correct,accuracy"]
    lines += [f"{r.label},{r.support},{r.correct},{r.accuracy:.6f}" for r in rows]
    return "\n".join(lines) + "\n"


def misclassified_csv(rows: Sequence[MisclassifiedRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["speaker_id", "session_id", "true", "predicted", "hamd", "qids"])
    for r in rows:
        w.writerow([r.speaker_id, r.session_id, CLASS_NAMES[r.true], CLASS_NAMES[r.predicted],
                    _fmt(r.hamd), _fmt(r.qids)])
    return buf.getvalue()


# -- SVG rendering ------------------------------------------------------------

def confusion_svg(cm: np.ndarray, title: str = "Confusion matrix") -> str:
    cm = np.asarray(cm)
    cell, left, top = 70, 100, 50
    peak = max(int(cm.max()), 1)
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{left + 3 * cell + 20}" '
           f'height="{top + 3 * cell + 50}" font-family="sans-serif" font-size="12">',
           f'<text x="{left}" y="20" font-size="14">{escape(title)}</text>']
    for i in range(3):
        out.append(f'<text x="{left - 8}" y="{top + i * cell + cell / 2 + 4}" text-anchor="end">'
                   f'{CLASS_NAMES[i]}</text>')
        out.append(f'<text x="{left + i * cell + cell / 2}" y="{top + 3 * cell + 18}" '
                   f'text-anchor="middle">{CLASS_NAMES[i]}</text>')
        for j in range(3):
            shade = int(255 - 200 * cm[i, j] / peak)
            out.append(f'<rect x="{left + j * cell}" y="{top + i * cell}" width="{cell}" height="{cell}" '
                       f'fill="rgb({shade},{shade},255)" stroke="#333"/>')
            out.append(f'<text x="{left + j * cell + cell / 2}" y="{top + i * cell + cell / 2 + 4}" '
                       f'text-anchor="middle">{int(cm[i, j])}</text>')
    out.append(f'<text x="{left + 1.5 * cell}" y="{top + 3 * cell + 38}" text-anchor="middle">predicted</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def bars_svg(labels: Sequence[str], values: Sequence[float], title: str, ylabel: str = "accuracy") -> str:
    width, height, left, bottom = 60 * max(len(labels), 1) + 80, 260, 50, 40
    plot_h = height - bottom - 40
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
           f'font-family="sans-serif" font-size="12">',
           f'<text x="{left}" y="20" font-size="14">{escape(title)}</text>',
           f'<line x1="{left}" y1="{height - bottom}" x2="{width - 10}" y2="{height - bottom}" stroke="#333"/>',
           f'<text x="12" y="{40 + plot_h / 2}" transform="rotate(-90 12 {40 + plot_h / 2})">{escape(ylabel)}</text>']
    for k, (lab, v) in enumerate(zip(labels, values)):
        h = plot_h * max(0.0, min(1.0, float(v)))
        x = left + 10 + 60 * k
        out.append(f'<rect x="{x}" y="{height - bottom - h:.1f}" width="40" height="{h:.1f}" fill="#4a7bd0"/>')
        out.append(f'<text x="{x + 20}" y="{height - bottom - h - 4:.1f}" text-anchor="middle">{v:.2f}</text>')
        out.append(f'<text x="{x + 20}" y="{height - bottom + 16}" text-anchor="middle">{escape(lab)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"
