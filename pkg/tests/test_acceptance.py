"""Acceptance suite: one test per criterion, each printing a single PASS/FAIL line.

The lines are also collected and repeated in the terminal summary (see conftest.py).
"""

import contextlib
import hashlib
import math
import time
from fractions import Fraction
from pathlib import Path

import numpy as np
import pytest

from acfnet import cli
from acfnet import pipeline as P
from acfnet.acf import acf_matrix
from acfnet.checks import gradcheck_suite
from acfnet.config import load_config
from acfnet.corpus import Scale, ScaleScore, SeverityClass, Split, admit_session, assign_splits, read_manifest
from acfnet.dsp import ChannelSeries, FeatureSource
from acfnet.evaluation import Prediction, confusion, metrics
from acfnet.models import (DILATED_PRESETS, LSTM_PRESETS, DilatedCnn, DilatedCnnConfig, SessionLstm,
                           SessionLstmConfig, forward_session)
from acfnet.training import TrainConfig, fit_loop, lstm_lr_schedule, predict_logits, train_segment_model

RESULTS: dict[int, str] = {}


@contextlib.contextmanager
def criterion(number: int, title: str, budget_s: float | None = None):
    """Record and print PASS or FAIL for one criterion; also enforces its runtime budget."""
    start = time.perf_counter()
    notes: list[str] = []
    try:
        yield notes
        elapsed = time.perf_counter() - start
        if budget_s is not None:
            notes.append(f"{elapsed:.1f}s of {budget_s:.0f}s")
            assert elapsed < budget_s, f"took {elapsed:.1f}s, budget {budget_s:.0f}s"
    except BaseException as exc:
        line = f"criterion {number} FAIL {title}: {exc}".splitlines()[0]
        RESULTS[number] = line
        print(line)
        raise
    line = f"criterion {number} PASS {title}" + (f" ({'; '.join(notes)})" if notes else "")
    RESULTS[number] = line
    print(line)


# -- 1 -----------------------------------------------------------------------------------------

def _naive_acf(x: np.ndarray, max_delay: int) -> tuple[np.ndarray, np.ndarray]:
    """Triple-loop correlations, plus the mean absolute product behind each entry."""
    m, n = x.shape
    out = np.zeros((m * m, max_delay + 1))
    scale = np.zeros_like(out)
    for i in range(m):
        for j in range(m):
            for d in range(max_delay + 1):
                total = magnitude = 0.0
                for t in range(n - d):
                    total += x[i, t] * x[j, t + d]
                    magnitude += abs(x[i, t] * x[j, t + d])
                out[i * m + j, d] = total / (n - d)
                scale[i * m + j, d] = magnitude / (n - d)
    return out, scale


def test_criterion_1_acf_oracle():
    # Relative error of a sum is taken against the magnitude of its terms; an entry that
    # cancels to nearly zero has no meaningful elementwise relative error in floating point.
    rng = np.random.default_rng(20240101)
    with criterion(1, "ACF matches the triple-loop oracle on 100 cases within 1e-12", 10.0) as notes:
        worst = worst_entry = 0.0
        for _ in range(100):
            m, n = int(rng.integers(1, 5)), int(rng.integers(2, 101))
            d = int(rng.integers(0, min(10, n - 1) + 1))
            x = rng.standard_normal((m, n))
            x = (x - x.mean(axis=1, keepdims=True)) / np.maximum(x.std(axis=1, keepdims=True), 1e-12)
            names = tuple(f"c{k}" for k in range(m))
            got = acf_matrix(ChannelSeries(x, 100.0, names, FeatureSource.SYNTHETIC), d).values
            want, scale = _naive_acf(x, d)
            assert got.shape == (m * m, d + 1)
            err = np.abs(got - want)
            worst = max(worst, float(np.max(err / np.maximum(scale, 1e-300))))
            worst_entry = max(worst_entry, float(np.max(err / np.maximum(np.abs(want), 1e-300))))
        notes.append(f"worst relative error {worst:.1e}, worst entrywise {worst_entry:.1e}")
        assert worst < 1e-12


# -- 2 -----------------------------------------------------------------------------------------

def test_criterion_2_gradient_checks():
    with criterion(2, "layer gradchecks < 1e-4 and full dilated CNN < 1e-3 at 64-bit", 120.0) as notes:
        reports = gradcheck_suite(0)
        layers = {k: r.worst for k, r in reports.items() if k != "full_dilated_cnn"}
        for name in ("dilated_conv", "dense", "batch_norm", "max_pool", "lstm", "weighted_softmax_ce"):
            assert name in layers, name
        notes.append(f"worst layer {max(layers.values()):.1e}, full CNN {reports['full_dilated_cnn'].worst:.1e}")
        bad = {k: v for k, v in layers.items() if not v < 1e-4}
        assert not bad, f"layers over 1e-4: {bad}"
        assert reports["full_dilated_cnn"].worst < 1e-3


# -- 3 -----------------------------------------------------------------------------------------

def test_criterion_3_shape_parity():
    with criterion(3, "TV CNN flattens to 184 with the declared chain; all six presets build"):
        cfg = DilatedCnnConfig(**DILATED_PRESETS["tv"])
        model = DilatedCnn(cfg, seed=0)
        assert cfg.flatten_size == 184
        chain = "\n".join(model.layer_chain())
        for piece in ("dilation 1", "dilation 3", "dilation 7", "dilation 15", "flatten -> 184"):
            assert piece in chain, piece
        rng = np.random.default_rng(0)
        assert len(DILATED_PRESETS) == 3 and len(LSTM_PRESETS) == 3
        for name, preset in DILATED_PRESETS.items():
            m = DilatedCnn(DilatedCnnConfig(**preset), seed=0)
            x = rng.standard_normal((2, preset["n_channels"] ** 2, 51))
            logits, _ = predict_logits(m, x)
            assert logits.shape == (2, 3), name
        for name, preset in LSTM_PRESETS.items():
            m = SessionLstm(SessionLstmConfig(**preset, input_size=64), seed=0)
            out = forward_session(m, rng.standard_normal((5, 64)))
            assert np.asarray(out).shape == (3,), name


# -- 4 -----------------------------------------------------------------------------------------

@pytest.mark.slow
def test_criterion_4_overfit(small_corpus):
    corpus_dir, _ = small_corpus
    with criterion(4, "dilated CNN fits 32 segments to 100% within 300 epochs at lr 2e-5", 300.0) as notes:
        records = assign_splits(read_manifest(corpus_dir / "manifest.csv"), seed=0)
        sessions = P.load_sessions(corpus_dir, records, 50, 8)
        std = P.fit_standardizer(P.by_split(sessions, Split.TRAIN))
        x, y = P.stack_segments(sessions, std)
        idx = np.random.default_rng(0).choice(len(x), 32, replace=False)
        x, y = x[idx], y[idx]
        model = DilatedCnn(DilatedCnnConfig(**DILATED_PRESETS["tv"]), seed=0)
        train_segment_model(model, x, y, x, y, TrainConfig(learning_rate=2e-5, max_epochs=300, patience=299,
                                                           restore_best=False, seed=0))
        logits, _ = predict_logits(model, x)
        acc = float(np.mean(logits.argmax(axis=1) == y))
        notes.append(f"training accuracy {acc:.3f}")
        assert acc == 1.0


# -- 5 -----------------------------------------------------------------------------------------

@pytest.mark.slow
def test_criterion_5_end_to_end(tmp_path):
    with criterion(5, "default synth corpus: session UAR >= 0.85 and LSTM UAR >= voting UAR", 1800.0) as notes:
        work = str(tmp_path)
        assert cli.run(["synth", "--spec", "default", "--out", work, "--seed", "0"]) == 0
        for stage in ("features", "acf", "train-segment", "embed", "train-session"):
            assert cli.run([stage, "--work", work]) == 0, stage
        cfg = load_config(tmp_path / "config.ini")
        records = assign_splits(read_manifest(cfg.manifest), cfg.ratios, cfg.seed)
        train_speakers = {r.speaker_id for r in records if r.split is Split.TRAIN}
        test_speakers = {r.speaker_id for r in records if r.split is Split.TEST}
        assert train_speakers.isdisjoint(test_speakers)
        uar = cli.stage_evaluate(cfg, cfg.seed)
        lstm, vote = uar["acf_cnn_lstm/session"], uar["acf_cnn_vote/session"]
        notes.append(f"LSTM {lstm:.3f}, vote {vote:.3f}, segment {uar['acf_cnn/segment']:.3f}")
        assert lstm >= 0.85
        assert lstm >= vote


# -- 6 -----------------------------------------------------------------------------------------

F = Fraction
NAN = math.nan
# (confusion matrix, accuracy, UAR, (F1 N, F1 M, F1 S)); values worked out by hand.
HAND_MATRICES = [
    ([[5, 0, 0], [0, 5, 0], [0, 0, 5]], F(1), F(1), (F(1), F(1), F(1))),
    ([[2, 0, 0], [0, 2, 0], [0, 0, 0]], F(1), F(1), (F(1), F(1), NAN)),
    ([[1, 1, 0], [0, 1, 1], [1, 0, 1]], F(1, 2), F(1, 2), (F(1, 2), F(1, 2), F(1, 2))),
    ([[3, 0, 0], [3, 0, 0], [3, 0, 0]], F(1, 3), F(1, 3), (F(1, 2), F(0), F(0))),
    ([[4, 1, 0], [2, 6, 2], [0, 1, 3]], F(13, 19), F(43, 60), (F(8, 11), F(2, 3), F(2, 3))),
    ([[0, 2, 0], [2, 0, 0], [0, 0, 4]], F(1, 2), F(1, 3), (F(0), F(0), F(1))),
    ([[10, 0, 0], [1, 0, 0], [1, 0, 0]], F(5, 6), F(1, 3), (F(10, 11), F(0), F(0))),
    ([[0, 0, 0], [0, 3, 1], [0, 2, 2]], F(5, 8), F(5, 8), (NAN, F(2, 3), F(4, 7))),
    ([[7, 2, 1], [3, 5, 2], [1, 1, 8]], F(2, 3), F(2, 3), (F(2, 3), F(5, 9), F(16, 21))),
    ([[1, 0, 0], [0, 0, 0], [0, 0, 0]], F(1), F(1), (F(1), NAN, NAN)),
]


def _preds_from(cm) -> list[Prediction]:
    return [Prediction(f"{t}{p}{k}", t, p) for t in range(3) for p in range(3) for k in range(cm[t][p])]


def test_criterion_6_metric_oracles():
    with criterion(6, "metrics match 10 hand-computed matrices exactly; UAR invariant to duplication") as notes:
        for cm, acc, uar, f1 in HAND_MATRICES:
            m = metrics(confusion(_preds_from(cm)))
            assert m.accuracy == float(acc), cm
            assert m.uar == float(uar), cm
            for got, want in zip(m.f1, f1):
                assert (math.isnan(got) and math.isnan(want)) or got == float(want), cm
        rng = np.random.default_rng(6)
        for _ in range(100):
            cm = rng.integers(0, 8, size=(3, 3))
            cm[rng.integers(0, 3), rng.integers(0, 3)] += 1
            preds = _preds_from(cm.tolist())
            k = int(rng.integers(2, 6))
            assert metrics(confusion(preds * k)).uar == metrics(confusion(preds)).uar
        notes.append("100 duplication trials")


# -- 7 -----------------------------------------------------------------------------------------

def test_criterion_7_schedule_and_stopping():
    with criterion(7, "LSTM learning-rate sequence and stop at epoch 16 on worsening loss"):
        expected = [2e-4] * 10 + [1e-4] * 10 + [5e-5] * 10 + [2.5e-5] * 10 + [2e-5] * 60
        assert [lstm_lr_schedule(e) for e in range(1, 101)] == expected
        losses = iter(np.arange(1.0, 400.0))
        h = fit_loop(lambda e, lr: 0.0, lambda: (float(next(losses)), 0.0), TrainConfig(patience=15))
        assert len(h.epochs) == 16 and h.stopped_early and h.best_epoch == 1


# -- 8 -----------------------------------------------------------------------------------------

HAMD_BOUNDARIES = {0: 1, 7: 1, 8: 2, 13: 2, 14: 3, 18: 3, 19: 4, 22: 4, 23: 5, 52: 5}
QIDS_BOUNDARIES = {0: 1, 5: 1, 6: 2, 10: 2, 11: 3, 15: 3, 16: 4, 20: 4, 21: 5, 27: 5}
LEVEL_CLASS = {1: SeverityClass.NORMAL, 2: SeverityClass.MODERATE, 3: SeverityClass.MODERATE,
               4: SeverityClass.SEVERE, 5: SeverityClass.SEVERE}


def test_criterion_8_severity_mapping():
    from acfnet.corpus import severity_from_scale

    with criterion(8, "all scale boundary scores map to their levels; disagreeing pairs excluded"):
        for scale, table in ((Scale.HAMD, HAMD_BOUNDARIES), (Scale.QIDS, QIDS_BOUNDARIES)):
            for score, level in table.items():
                assert severity_from_scale(ScaleScore(scale, score)) == level, (scale, score)
                assert admit_session([ScaleScore(scale, score)]) is LEVEL_CLASS[level]
        for h, hl in HAMD_BOUNDARIES.items():
            for q, ql in QIDS_BOUNDARIES.items():
                got = admit_session([ScaleScore(Scale.HAMD, h), ScaleScore(Scale.QIDS, q)])
                assert got is (LEVEL_CLASS[hl] if hl == ql else None), (h, q)


# -- 9 -----------------------------------------------------------------------------------------

def _full_run(root: Path) -> dict[str, str]:
    work = str(root)
    assert cli.run(["synth", "--spec", "small", "--out", work, "--seed", "3"]) == 0
    for stage in ("features", "acf", "train-segment", "embed", "train-session", "train-baseline", "vote",
                  "evaluate"):
        assert cli.run([stage, "--work", work]) == 0, stage
    return {str(p.relative_to(root)): hashlib.sha256(p.read_bytes()).hexdigest()
            for p in sorted(root.rglob("*")) if p.is_file()}


@pytest.mark.slow
def test_criterion_9_determinism(tmp_path):
    with criterion(9, "two full pipeline runs give bit-identical checkpoints and reports") as notes:
        a = _full_run(tmp_path / "a")
        b = _full_run(tmp_path / "b")
        assert any(k.startswith("checkpoints/") for k in a) and any(k.startswith("reports/") for k in a)
        differing = sorted(k for k in a.keys() | b.keys() if a.get(k) != b.get(k))
        notes.append(f"{len(a)} files compared")
        assert not differing, f"differing files: {differing[:5]}"
