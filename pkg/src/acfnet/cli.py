"""``acfnet`` command line: every pipeline stage as a subcommand over a fixed work-dir layout.

Work dir::

    config.ini
    corpus/          manifest.csv + features/*.csv   (written by ``synth``)
    features/        index.csv + one z-scored CSV per segment
    acf/             index.csv + one ACF CSV per segment + standardizer.bin
    checkpoints/     segment.ckpt, session.ckpt, baseline.ckpt, embeddings_<split>.bin
    reports/         histories, metrics, confusion matrices, predictions, SVG figures
"""

from __future__ import annotations

import argparse
import csv
import itertools
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace
from pathlib import Path
from typing import Sequence

import numpy as np

from . import __version__
from .acf import (AcfStandardizer, acf_matrix, apply_acf_standardizer, fit_acf_standardizer, read_acf_csv,
                  write_acf_csv)
from .autodiff.ops import softmax
from .checkpoint import load_checkpoint, read_container, save_checkpoint, write_container
from .config import CONFIG_NAME, PipelineConfig, load_config, render_config, validate_config
from .corpus import Scale, SessionRecord, Split, assign_splits, read_manifest, segment_sessions
from .dsp import (ChannelSeries, FeatureSource, ingest_feature_csv, load_wav, mfcc, normalize_peak,
                  slice_segment, standardize_channels, write_feature_csv)
from .errors import FormatError
from .evaluation import (Prediction, accuracy_by_segment_count, bars_svg, buckets_csv, confusion,
                         confusion_csv, confusion_svg, metrics, metrics_csv, misclassification_report,
                         misclassified_csv, plurality_vote, predictions_csv)
from .models import GRID, LSTM_PRESETS, BaselineCnn, DilatedCnn, SessionLstm
from .synth import SPECS, generate_corpus
from .training import (export_embeddings, model_from_checkpoint, predict_logits, session_probabilities,
                       train_baseline_model, train_segment_model, train_session_model)

log = logging.getLogger("acfnet")

SOURCES = {"synthetic": FeatureSource.SYNTHETIC, "tv": FeatureSource.TV, "formant": FeatureSource.FORMANT,
           "egemaps": FeatureSource.EGEMAPS, "mfcc": FeatureSource.MFCC}
INDEX_FIELDS = ("session_id", "speaker_id", "split", "label", "index", "start_s", "end_s", "file")
TRAIN_SPLITS = (Split.TRAIN, Split.VALIDATION)


class Workspace:
    """Paths of the fixed work-dir layout."""

    def __init__(self, root: Path):
        self.root = Path(root)

    def __getattr__(self, name):
        if name in ("corpus", "features", "acf", "checkpoints", "reports"):
            return self.root / name
        raise AttributeError(name)

    def ensure(self, *names: str) -> None:
        for n in names:
            (self.root / n).mkdir(parents=True, exist_ok=True)


# -- segment index ------------------------------------------------------------

def write_index(path: Path, rows: Sequence[dict]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, INDEX_FIELDS, lineterminator="\n")
        w.writeheader()
        w.writerows(rows)


def read_index(path: Path, splits: Sequence[Split] | None = None) -> list[dict]:
    if not path.is_file():
        raise FileNotFoundError(f"{path} not found; run the earlier pipeline stages first")
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    for r in rows:
        r["split"] = Split.parse(r["split"])
        r["label"] = int(r["label"])
        r["index"] = int(r["index"])
    if splits is not None:
        rows = [r for r in rows if r["split"] in splits]
    return rows


def group_by_session(rows: Sequence[dict]) -> dict[str, list[dict]]:
    out: dict[str, list[dict]] = {}
    for r in rows:
        out.setdefault(r["session_id"], []).append(r)
    for segs in out.values():
        segs.sort(key=lambda r: r["index"])
    return out


def load_acfs(ws: Workspace, rows: Sequence[dict]) -> np.ndarray:
    """Raw ACF matrices for the given index rows; the only reader of ``acf/*.csv``."""
    return np.stack([read_acf_csv(ws.acf / r["file"]).values for r in rows])


def load_segment_series(ws: Workspace, rows: Sequence[dict]) -> list[ChannelSeries]:
    """Z-scored segment features for the given index rows; the only reader of ``features/*.csv``."""
    return [ingest_feature_csv(ws.features / r["file"]) for r in rows]


def load_standardizer(ws: Workspace) -> AcfStandardizer:
    meta, arrays = read_container(ws.acf / "standardizer.bin")
    return AcfStandardizer(arrays["mean"], arrays["std"], meta["fitted_on"])


# -- stages ---------------------------------------------------------------------

def _records(cfg: PipelineConfig) -> list[SessionRecord]:
    return assign_splits(read_manifest(cfg.manifest), cfg.ratios, cfg.seed)


def _session_series(cfg: PipelineConfig, rec: SessionRecord) -> ChannelSeries:
    path = cfg.corpus_dir / rec.path
    if cfg.source == "mfcc":
        return mfcc(normalize_peak(load_wav(path)))
    return ingest_feature_csv(path, cfg.channels, SOURCES[cfg.source])


def _map(fn, items, workers: int):
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            return list(pool.map(fn, items))
    return [fn(x) for x in items]


def stage_synth(spec_name: str, out: Path, seed: int) -> Path:
    ws = Workspace(out)
    spec = SPECS[spec_name](seed)
    records = generate_corpus(spec, ws.corpus)
    cfg_path = ws.root / CONFIG_NAME
    cfg_path.write_text(render_config("corpus/manifest.csv", ".", "synthetic", spec.channels, seed),
                        encoding="utf-8")
    log.info("wrote %d sessions to %s and %s", len(records), ws.corpus, cfg_path)
    return cfg_path


def stage_features(cfg: PipelineConfig, workers: int) -> int:
    ws = Workspace(cfg.work_dir)
    ws.ensure("features")
    records = _records(cfg)
    segs = segment_sessions(records)
    todo = [r for r in records if r.session_id in segs]

    def work(rec: SessionRecord) -> list[dict]:
        cs = _session_series(cfg, rec)
        rows = []
        for seg in segs[rec.session_id]:
            piece = standardize_channels(slice_segment(cs, seg.start_s, seg.end_s))
            name = f"{rec.session_id}_{seg.index:03d}.csv"
            write_feature_csv(ws.features / name, piece, {"source": piece.source.value})
            rows.append(dict(session_id=rec.session_id, speaker_id=rec.speaker_id, split=rec.split.value,
                             label=int(rec.severity), index=seg.index, start_s=repr(seg.start_s),
                             end_s=repr(seg.end_s), file=name))
        return rows

    rows = [r for chunk in _map(work, todo, workers) for r in chunk]
    write_index(ws.features / "index.csv", rows)
    log.info("features: %d segments from %d sessions", len(rows), len(todo))
    return len(rows)


def stage_acf(cfg: PipelineConfig, workers: int) -> int:
    ws = Workspace(cfg.work_dir)
    ws.ensure("acf")
    rows = read_index(ws.features / "index.csv")

    def work(row: dict):
        series = load_segment_series(ws, [row])[0]
        if cfg.max_delay >= series.n_frames:
            raise ValueError(f"segment {row['file']} has {series.n_frames} frames; max_delay must be smaller")
        m = acf_matrix(series, cfg.max_delay)
        write_acf_csv(ws.acf / row["file"], m)
        return m.values

    values = _map(work, rows, workers)
    write_index(ws.acf / "index.csv", [{**r, "split": r["split"].value} for r in rows])
    train = np.stack([v for v, r in zip(values, rows) if r["split"] is Split.TRAIN])
    std = fit_acf_standardizer(list(train))
    write_container(ws.acf / "standardizer.bin", {"fitted_on": std.fitted_on, "max_delay": cfg.max_delay},
                    {"mean": std.mean, "std": std.std})
    log.info("acf: %d matrices, standardizer fitted on %d training segments", len(rows), std.fitted_on)
    return len(rows)


def _xy(ws: Workspace, rows, std):
    x = apply_acf_standardizer(std, load_acfs(ws, rows))
    return x, np.array([r["label"] for r in rows], dtype=np.int64)


def stage_train_segment(cfg: PipelineConfig, seed: int, precision: int, model_overrides: dict | None = None,
                        train_overrides: dict | None = None, out_name: str = "segment"):
    ws = Workspace(cfg.work_dir)
    ws.ensure("checkpoints", "reports")
    rows = read_index(ws.acf / "index.csv", TRAIN_SPLITS)
    std = load_standardizer(ws)
    xtr, ytr = _xy(ws, [r for r in rows if r["split"] is Split.TRAIN], std)
    xva, yva = _xy(ws, [r for r in rows if r["split"] is Split.VALIDATION], std)
    mcfg = cfg.dilated_config()
    if model_overrides:
        mcfg = replace(mcfg, **model_overrides)
    tcfg = cfg.train_config("segment", seed, precision)
    if train_overrides:
        tcfg = replace(tcfg, **train_overrides)
    model = DilatedCnn(mcfg, seed=seed, precision=precision)
    ck, history = train_segment_model(model, xtr, ytr, xva, yva, tcfg, std)
    if out_name:
        save_checkpoint(ws.checkpoints / f"{out_name}.ckpt", ck)
        (ws.reports / f"{out_name}_history.csv").write_text(history.to_csv(), encoding="utf-8")
    log.info("segment model: %d epochs, best %s", len(history.epochs), history.best_epoch)
    return ck, history


def stage_embed(cfg: PipelineConfig) -> dict[str, int]:
    ws = Workspace(cfg.work_dir)
    ck = load_checkpoint(ws.checkpoints / "segment.ckpt")
    model = model_from_checkpoint(ck)
    counts = {}
    for split in Split:
        rows = read_index(ws.acf / "index.csv", [split])
        sessions = group_by_session(rows)
        emb = export_embeddings(ck, {sid: list(load_acfs(ws, segs)) for sid, segs in sessions.items()}, model)
        ids = list(emb)
        meta = {"split": split.value, "sessions": ids, "labels": [sessions[s][0]["label"] for s in ids],
                "speakers": [sessions[s][0]["speaker_id"] for s in ids], "width": int(model.cfg.d1_units)}
        write_container(ws.checkpoints / f"embeddings_{split.value}.bin", meta,
                        {f"emb/{sid}": emb[sid] for sid in ids})
        counts[split.value] = len(ids)
    return counts


def read_embeddings(ws: Workspace, split: Split) -> tuple[list[str], list[int], list[np.ndarray]]:
    meta, arrays = read_container(ws.checkpoints / f"embeddings_{split.value}.bin")
    ids = meta["sessions"]
    return ids, meta["labels"], [arrays[f"emb/{sid}"] for sid in ids]


def stage_train_session(cfg: PipelineConfig, seed: int, precision: int, preset: dict | None = None,
                        train_overrides: dict | None = None, out_name: str = "session"):
    ws = Workspace(cfg.work_dir)
    ws.ensure("checkpoints", "reports")
    _, ytr, str_ = read_embeddings(ws, Split.TRAIN)
    _, yva, sva = read_embeddings(ws, Split.VALIDATION)
    width = str_[0].shape[1]
    lcfg = cfg.lstm_config(width)
    if preset:
        lcfg = replace(lcfg, **preset)
    tcfg = cfg.train_config("session", seed, precision)
    if train_overrides:
        tcfg = replace(tcfg, **train_overrides)
    model = SessionLstm(lcfg, seed=seed, precision=precision)
    ck, history = train_session_model(model, str_, ytr, sva, yva, tcfg)
    if out_name:
        save_checkpoint(ws.checkpoints / f"{out_name}.ckpt", ck)
        (ws.reports / f"{out_name}_history.csv").write_text(history.to_csv(), encoding="utf-8")
    log.info("session model: %d epochs, best %s", len(history.epochs), history.best_epoch)
    return ck, history


def _baseline_inputs(series: Sequence[ChannelSeries], frames: int) -> np.ndarray:
    """Crop or zero-pad each z-scored segment to ``frames`` frames."""
    out = np.zeros((len(series), series[0].n_channels, frames))
    for k, s in enumerate(series):
        n = min(frames, s.n_frames)
        out[k, :, :n] = s.data[:, :n]
    return out


def _baseline_frames(cfg: PipelineConfig, ws: Workspace) -> int:
    if "input_frames" in cfg.baseline_model:
        return int(cfg.baseline_model["input_frames"])
    first = read_index(ws.features / "index.csv", [Split.TRAIN])[:1]
    rate = load_segment_series(ws, first)[0].frame_rate_hz
    return int(round(20.0 * rate))


def stage_train_baseline(cfg: PipelineConfig, seed: int, precision: int):
    ws = Workspace(cfg.work_dir)
    ws.ensure("checkpoints", "reports")
    rows = read_index(ws.features / "index.csv", TRAIN_SPLITS)
    frames = _baseline_frames(cfg, ws)
    tr = [r for r in rows if r["split"] is Split.TRAIN]
    va = [r for r in rows if r["split"] is Split.VALIDATION]
    xtr = _baseline_inputs(load_segment_series(ws, tr), frames)
    xva = _baseline_inputs(load_segment_series(ws, va), frames)
    model = BaselineCnn(cfg.baseline_config(frames), seed=seed, precision=precision)
    ck, history = train_baseline_model(model, xtr, [r["label"] for r in tr], xva, [r["label"] for r in va],
                                       cfg.train_config("baseline", seed, precision))
    save_checkpoint(ws.checkpoints / "baseline.ckpt", ck)
    (ws.reports / "baseline_history.csv").write_text(history.to_csv(), encoding="utf-8")
    return ck, history


# -- evaluation -------------------------------------------------------------------

def _segment_probs(ws: Workspace, model, sessions: dict[str, list[dict]], inputs) -> dict[str, np.ndarray]:
    out = {}
    for sid, segs in sessions.items():
        logits, _ = predict_logits(model, inputs(segs).astype(model.dtype))
        out[sid] = softmax(logits.astype(np.float64))
    return out


def _vote(sessions: dict[str, list[dict]], probs: dict[str, np.ndarray], seed: int) -> list[Prediction]:
    rng = np.random.default_rng(seed)
    preds = []
    for sid, segs in sessions.items():
        pairs = [(int(np.argmax(p)), float(np.max(p))) for p in probs[sid]]
        cls = plurality_vote(pairs, 0.5, rng)
        conf = float(np.mean([c for k, c in pairs if k == cls]))
        preds.append(Prediction(sid, segs[0]["label"], cls, conf))
    return preds


def _segment_level(sessions, probs) -> list[Prediction]:
    return [Prediction(f"{sid}#{r['index']}", r["label"], int(np.argmax(p)), float(np.max(p)))
            for sid, segs in sessions.items() for r, p in zip(segs, probs[sid])]


def _write_text(path: Path, text: str) -> None:
    path.write_text(text, encoding="utf-8")


def stage_vote(cfg: PipelineConfig, seed: int) -> list[Prediction]:
    ws = Workspace(cfg.work_dir)
    ws.ensure("reports")
    ck = load_checkpoint(ws.checkpoints / "segment.ckpt")
    model = model_from_checkpoint(ck)
    sessions = group_by_session(read_index(ws.acf / "index.csv", [Split.TEST]))
    probs = _segment_probs(ws, model, sessions,
                           lambda segs: apply_acf_standardizer(ck.standardizer, load_acfs(ws, segs)))
    preds = _vote(sessions, probs, seed)
    _write_text(ws.reports / "vote_predictions.csv", predictions_csv(preds))
    _write_text(ws.reports / "vote_metrics.csv",
                metrics_csv([("acf_cnn_vote", "session", cfg.source, metrics(confusion(preds)))]))
    return preds


def stage_evaluate(cfg: PipelineConfig, seed: int) -> dict[str, float]:
    """Test-split reports for every trained model; returns UAR per (model, level)."""
    ws = Workspace(cfg.work_dir)
    ws.ensure("reports")
    sessions = group_by_session(read_index(ws.acf / "index.csv", [Split.TEST]))
    records = {r.session_id: r for r in _records(cfg)}
    results: list[tuple[str, str, str, object]] = []
    session_preds: dict[str, list[Prediction]] = {}

    def emit(name: str, level: str, preds: list[Prediction]):
        m = metrics(confusion(preds))
        results.append((name, level, cfg.source, m))
        cm = confusion(preds)
        _write_text(ws.reports / f"{name}_{level}_predictions.csv", predictions_csv(preds))
        _write_text(ws.reports / f"{name}_{level}_confusion.csv", confusion_csv(cm))
        _write_text(ws.reports / f"{name}_{level}_confusion.svg",
                    confusion_svg(cm, f"{name} ({level}), UAR {m.uar:.3f}"))
        if level == "session":
            session_preds[name] = preds

    ck = load_checkpoint(ws.checkpoints / "segment.ckpt")
    cnn = model_from_checkpoint(ck)
    probs = _segment_probs(ws, cnn, sessions,
                           lambda segs: apply_acf_standardizer(ck.standardizer, load_acfs(ws, segs)))
    emit("acf_cnn", "segment", _segment_level(sessions, probs))
    emit("acf_cnn_vote", "session", _vote(sessions, probs, seed))

    if (ws.checkpoints / "session.ckpt").is_file():
        lstm = model_from_checkpoint(load_checkpoint(ws.checkpoints / "session.ckpt"))
        ids, labels, seqs = read_embeddings(ws, Split.TEST)
        p = session_probabilities(lstm, seqs)
        emit("acf_cnn_lstm", "session",
             [Prediction(i, y, int(np.argmax(q)), float(np.max(q))) for i, y, q in zip(ids, labels, p)])

    if (ws.checkpoints / "baseline.ckpt").is_file():
        bck = load_checkpoint(ws.checkpoints / "baseline.ckpt")
        base = model_from_checkpoint(bck)
        frames = base.cfg.input_frames
        bprobs = _segment_probs(ws, base, sessions,
                                lambda segs: _baseline_inputs(load_segment_series(ws, segs), frames))
        emit("baseline_cnn", "segment", _segment_level(sessions, bprobs))
        emit("baseline_cnn_vote", "session", _vote(sessions, bprobs, seed))

    _write_text(ws.reports / "metrics.csv", metrics_csv(results))

    best = "acf_cnn_lstm" if "acf_cnn_lstm" in session_preds else "acf_cnn_vote"
    preds = session_preds[best]
    counts = {sid: len(segs) for sid, segs in sessions.items()}
    buckets = accuracy_by_segment_count(preds, counts)
    _write_text(ws.reports / "segment_count_accuracy.csv", buckets_csv(buckets))
    _write_text(ws.reports / "segment_count_accuracy.svg",
                bars_svg([b.label for b in buckets], [b.accuracy for b in buckets],
                         f"{best}: session accuracy by segment count"))
    scores = {sid: {"speaker_id": r.speaker_id, "hamd": r.score_of(Scale.HAMD), "qids": r.score_of(Scale.QIDS)}
              for sid, r in records.items() if sid in counts}
    _write_text(ws.reports / "misclassified.csv", misclassified_csv(misclassification_report(preds, scores)))
    return {f"{name}/{level}": m.uar for name, level, _, m in results}


# -- grid search --------------------------------------------------------------------

def stage_gridsearch(cfg: PipelineConfig, seed: int, precision: int, stage: str, max_epochs: int | None,
                     limit: int | None) -> list[dict]:
    ws = Workspace(cfg.work_dir)
    ws.ensure("reports")
    overrides = {} if max_epochs is None else {"max_epochs": max_epochs,
                                               "patience": min(15, max(1, max_epochs - 1))}
    rows = []
    if stage == "segment":
        keys = list(GRID)
        combos = [dict(zip(keys, vals)) for vals in itertools.product(*(GRID[k] for k in keys))]
        for combo in combos[:limit]:
            _, h = stage_train_segment(cfg, seed, precision, combo, overrides, out_name="")
            rows.append(_grid_row(combo, h))
    else:
        for name, preset in list(LSTM_PRESETS.items())[:limit]:
            _, h = stage_train_session(cfg, seed, precision, preset, overrides, out_name="")
            rows.append(_grid_row({"preset": name, **preset}, h))
    fields = list(rows[0]) if rows else []
    with open(ws.reports / f"gridsearch_{stage}.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fields, lineterminator="\n")
        w.writeheader()
        w.writerows(rows)
    return rows


def _grid_row(combo: dict, history) -> dict:
    best = history.epochs[history.best_epoch - 1]
    row = {k: (f"{v[0]}x{v[1]}" if isinstance(v, tuple) else v) for k, v in combo.items()}
    row.update(best_epoch=history.best_epoch, val_loss=repr(best.val_loss), val_uar=repr(best.val_uar),
               max_val_uar=repr(max(history.column("val_uar"))))
    return row


# -- argument parsing -----------------------------------------------------------------

def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--config", type=Path, help="pipeline config (default: <work>/config.ini)")
    p.add_argument("--work", type=Path, default=Path("."), help="work directory holding config.ini")
    p.add_argument("--seed", type=int, help="override the config seed")
    p.add_argument("--workers", type=int, default=os.cpu_count() or 1, help="worker threads for file stages")
    p.add_argument("--precision", type=int, choices=(32, 64), default=32, help="model float width")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    parser = argparse.ArgumentParser(prog="acfnet", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"acfnet {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    s = sub.add_parser("synth", parents=[common], help="generate a synthetic corpus and config")
    s.add_argument("--spec", choices=sorted(SPECS), default="default")
    s.add_argument("--out", type=Path, required=True)
    sub.add_parser("features", parents=[common], help="ingest, segment and z-score features")
    sub.add_parser("acf", parents=[common], help="compute ACF matrices and fit the standardizer")
    sub.add_parser("train-segment", parents=[common], help="train the dilated CNN")
    sub.add_parser("embed", parents=[common], help="export D1 embeddings per session")
    sub.add_parser("train-session", parents=[common], help="train the session LSTM")
    sub.add_parser("train-baseline", parents=[common], help="train the frame-level baseline CNN")
    sub.add_parser("evaluate", parents=[common], help="test-split metrics and reports")
    sub.add_parser("vote", parents=[common], help="plurality-voting session baseline")
    g = sub.add_parser("gridsearch", parents=[common], help="grid over CNN or LSTM settings")
    g.add_argument("--stage", choices=("segment", "session"), default="segment")
    g.add_argument("--max-epochs", type=int)
    g.add_argument("--limit", type=int, help="only the first N settings")
    sub.add_parser("gradcheck", parents=[common], help="finite-difference gradient checks")
    sub.add_parser("validate", parents=[common], help="list every config violation")
    return parser


def _config_path(args) -> Path:
    return args.config if args.config is not None else args.work / CONFIG_NAME


def run(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr, force=True)
    try:
        return _dispatch(args)
    except (OSError, ValueError, KeyError, FormatError) as exc:
        print(f"acfnet {args.command}: error: {exc}", file=sys.stderr)
        return 1


def _dispatch(args) -> int:
    if args.command == "synth":
        path = stage_synth(args.spec, args.out, 0 if args.seed is None else args.seed)
        print(path)
        return 0
    if args.command == "gradcheck":
        from .checks import gradcheck_suite

        ok = True
        for name, report in gradcheck_suite(0 if args.seed is None else args.seed).items():
            for line in report.lines():
                print(f"{name}/{line}")
            ok &= report.passed
        return 0 if ok else 1
    if args.command == "validate":
        problems = validate_config(_config_path(args))
        for p in problems:
            print(p)
        if not problems:
            print("config ok")
        return 1 if problems else 0

    cfg = load_config(_config_path(args))
    seed = cfg.seed if args.seed is None else args.seed
    if args.command == "features":
        print(stage_features(cfg, args.workers))
    elif args.command == "acf":
        print(stage_acf(cfg, args.workers))
    elif args.command == "train-segment":
        stage_train_segment(cfg, seed, args.precision)
    elif args.command == "embed":
        print(stage_embed(cfg))
    elif args.command == "train-session":
        stage_train_session(cfg, seed, args.precision)
    elif args.command == "train-baseline":
        stage_train_baseline(cfg, seed, args.precision)
    elif args.command == "vote":
        m = metrics(confusion(stage_vote(cfg, seed)))
        print(f"vote session UAR {m.uar:.4f} accuracy {m.accuracy:.4f}")
    elif args.command == "evaluate":
        for key, uar in stage_evaluate(cfg, seed).items():
            print(f"{key} UAR {uar:.4f}")
    elif args.command == "gridsearch":
        for row in stage_gridsearch(cfg, seed, args.precision, args.stage, args.max_epochs, args.limit):
            print(row)
    return 0


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
