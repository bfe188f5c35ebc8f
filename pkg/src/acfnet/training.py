"""Training loops, learning-rate schedule, early stopping and embedding export."""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .acf import AcfStandardizer, apply_acf_standardizer
from .autodiff.ops import softmax, softmax_cross_entropy
from .autodiff.optim import AdamState, adam_step
from .checkpoint import Checkpoint, EpochRecord, History
from .errors import ShapeError
from .evaluation import confusion, metrics, Prediction
from .models import (BaselineCnn, DilatedCnn, SessionLstm, build_model, model_config_dict,
                     pad_sequences)

log = logging.getLogger(__name__)

SEGMENT_LR = 2e-5
LSTM_LR_START = 2e-4
LSTM_LR_FLOOR = 2e-5


def compute_class_weights(class_counts: Sequence[int]) -> np.ndarray:
    """Inverse-frequency weights ``N / (K * N_c)``."""
    counts = np.asarray(class_counts, dtype=np.float64)
    if np.any(counts <= 0):
        raise ValueError(f"every class needs at least one sample, got counts {list(class_counts)}")
    return counts.sum() / (len(counts) * counts)


def lstm_lr_schedule(epoch: int) -> float:
    """Halve 2e-4 every 10 epochs, clamped at 2e-5 (epochs count from 1)."""
    if epoch < 1:
        raise ValueError("epochs are 1-based")
    return max(LSTM_LR_START * 0.5 ** ((epoch - 1) // 10), LSTM_LR_FLOOR)


def constant_lr(value: float) -> Callable[[int], float]:
    return lambda epoch: value


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float | str = SEGMENT_LR  # a number, or "lstm" for the stepped schedule
    max_epochs: int = 300
    patience: int = 15
    batch_size: int = 128
    class_weights: str | tuple[float, float, float] = "auto"
    seed: int = 0
    precision: int = 32
    restore_best: bool = True

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be at least 1")
        if not 0 < self.patience < self.max_epochs:
            raise ValueError("patience must be positive and below max_epochs")
        if isinstance(self.learning_rate, str) and self.learning_rate != "lstm":
            raise ValueError(f"unknown learning-rate schedule {self.learning_rate!r}")

    def lr_fn(self) -> Callable[[int], float]:
        if self.learning_rate == "lstm":
            return lstm_lr_schedule
        return constant_lr(float(self.learning_rate))

    def resolve_weights(self, labels: Sequence[int]) -> np.ndarray:
        if isinstance(self.class_weights, str):
            if self.class_weights != "auto":
                raise ValueError(f"class_weights must be 'auto' or three numbers, got {self.class_weights!r}")
            counts = np.bincount(np.asarray(labels, dtype=int), minlength=3)
            if np.all(counts > 0):
                return compute_class_weights(counts)
            # A class absent from training contributes no training loss; give it unit weight.
            warnings.warn(f"training labels miss classes {np.flatnonzero(counts == 0).tolist()}; "
                          "their weight is set to 1", stacklevel=2)
            w = np.ones(3)
            present = counts > 0
            w[present] = counts.sum() / (3 * counts[present])
            return w
        w = np.asarray(self.class_weights, dtype=np.float64)
        if w.shape != (3,) or np.any(w <= 0):
            raise ValueError("class weights must be three positive numbers")
        return w


class EarlyStopping:
    """Stop once the monitored loss has not improved for ``patience`` epochs."""

    def __init__(self, patience: int):
        self.patience = patience
        self.best = math.inf
        self.best_epoch: int | None = None
        self.wait = 0

    def update(self, epoch: int, loss: float) -> bool:
        """Record one epoch; True means stop now."""
        if loss < self.best:
            self.best, self.best_epoch, self.wait = loss, epoch, 0
            return False
        self.wait += 1
        return self.wait >= self.patience


def fit_loop(
    train_epoch: Callable[[int, float], float],
    validate: Callable[[], tuple[float, float]],
    cfg: TrainConfig,
    snapshot: Callable[[], object] | None = None,
    restore: Callable[[object], None] | None = None,
) -> History:
    """Epoch driver shared by every trainer.

    ``train_epoch(epoch, lr)`` returns the mean training loss; ``validate()``
    returns (validation loss, validation UAR). The best-validation snapshot is
    restored at the end when ``cfg.restore_best`` is set.
    """
    lr_fn = cfg.lr_fn()
    stopper = EarlyStopping(cfg.patience)
    history = History()
    best_state = None
    for epoch in range(1, cfg.max_epochs + 1):
        lr = lr_fn(epoch)
        train_loss = train_epoch(epoch, lr)
        val_loss, val_uar = validate()
        history.epochs.append(EpochRecord(epoch, float(train_loss), float(val_loss), float(val_uar), lr))
        stop = stopper.update(epoch, val_loss)
        if stopper.best_epoch == epoch and snapshot is not None:
            best_state = snapshot()
        log.debug("epoch %d lr %.2e train %.4f val %.4f uar %.3f", epoch, lr, train_loss, val_loss, val_uar)
        if stop:
            history.stopped_early = True
            break
    history.best_epoch = stopper.best_epoch
    if cfg.restore_best and best_state is not None and restore is not None:
        restore(best_state)
    return history


def _uar(y_true, y_pred) -> float:
    preds = [Prediction(str(k), int(t), int(p)) for k, (t, p) in enumerate(zip(y_true, y_pred))]
    return metrics(confusion(preds)).uar


def _check_labels(y, name):
    y = np.asarray(y, dtype=np.int64)
    if y.ndim != 1 or len(y) == 0:
        raise ValueError(f"{name} split is empty")
    if np.any((y < 0) | (y > 2)):
        raise ValueError(f"{name} labels must be 0, 1 or 2")
    return y


# -- CNN (segment or baseline) training ---------------------------------------

def predict_logits(model, x: np.ndarray, batch_size: int = 256) -> tuple[np.ndarray, np.ndarray]:
    """Eval-mode logits and embeddings for a stack of inputs."""
    logits, embs = [], []
    for a in range(0, len(x), batch_size):
        lo, em = model.forward(x[a:a + batch_size], train=False)
        logits.append(lo.data)
        embs.append(em.data)
    return np.concatenate(logits), np.concatenate(embs)


def _weighted_loss(logits: np.ndarray, y: np.ndarray, w: np.ndarray) -> float:
    return float(softmax_cross_entropy(logits.astype(np.float64), y, w).data)


def train_classifier(
    model: DilatedCnn | BaselineCnn,
    train_x: np.ndarray,
    train_y: Sequence[int],
    val_x: np.ndarray,
    val_y: Sequence[int],
    cfg: TrainConfig,
    standardizer: AcfStandardizer | None = None,
) -> tuple[Checkpoint, History]:
    """Mini-batch Adam on a CNN with weighted cross-entropy and early stopping.

    Inputs must already be standardized; ``standardizer`` is only stored in the
    returned checkpoint.
    """
    y_tr = _check_labels(train_y, "training")
    y_va = _check_labels(val_y, "validation")
    x_tr = np.asarray(train_x, dtype=model.dtype)
    x_va = np.asarray(val_x, dtype=model.dtype)
    if len(x_tr) != len(y_tr) or len(x_va) != len(y_va):
        raise ShapeError("inputs and labels differ in length")
    if len(y_tr) < 2:
        raise ValueError("batch norm needs at least two training segments")
    weights = cfg.resolve_weights(y_tr)
    rng = np.random.default_rng(cfg.seed)
    params = list(model.named_parameters())
    adam = AdamState(learning_rate=SEGMENT_LR)

    def train_epoch(epoch, lr):
        adam.learning_rate = lr
        order = rng.permutation(len(x_tr))
        total, seen = 0.0, 0
        for a in range(0, len(order), cfg.batch_size):
            idx = order[a:a + cfg.batch_size]
            if len(idx) < 2:
                # Batch norm needs two samples; a lone trailing sample sits this epoch out.
                continue
            model.zero_grad()
            logits, _ = model.forward(x_tr[idx], train=True, rng=rng)
            loss = softmax_cross_entropy(logits, y_tr[idx], weights)
            loss.backward()
            adam_step(params, adam)
            total += float(loss.data) * len(idx)
            seen += len(idx)
        return total / max(seen, 1)

    def validate():
        logits, _ = predict_logits(model, x_va)
        return _weighted_loss(logits, y_va, weights), _uar(y_va, logits.argmax(axis=1))

    history = fit_loop(train_epoch, validate, cfg, model.state_dict, model.load_state_dict)
    ck = Checkpoint(model.kind, model_config_dict(model), model.state_dict(), model.precision, cfg.seed,
                    standardizer, adam, history, {"class_weights": [float(v) for v in weights]})
    return ck, history


def train_segment_model(model: DilatedCnn, train_x, train_y, val_x, val_y,
                        cfg: TrainConfig = TrainConfig(), standardizer: AcfStandardizer | None = None):
    return train_classifier(model, train_x, train_y, val_x, val_y, cfg, standardizer)


def train_baseline_model(model: BaselineCnn, train_x, train_y, val_x, val_y, cfg: TrainConfig = TrainConfig()):
    return train_classifier(model, train_x, train_y, val_x, val_y, cfg)


def model_from_checkpoint(ck: Checkpoint):
    model = build_model(ck.kind, ck.config, seed=ck.seed, precision=ck.precision)
    model.load_state_dict(ck.state)
    return model


# -- embeddings ---------------------------------------------------------------

def export_embeddings(
    checkpoint: Checkpoint,
    sessions: dict[str, Sequence[np.ndarray]],
    model: DilatedCnn | None = None,
) -> dict[str, np.ndarray]:
    """D1 activations per session, one row per segment in the given order.

    ``sessions`` maps session id to its raw (unstandardized) ACF matrices. The
    checkpoint's standardizer is applied first; sessions without segments are
    skipped with a warning.
    """
    model = model if model is not None else model_from_checkpoint(checkpoint)
    out = {}
    for sid, mats in sessions.items():
        if len(mats) == 0:
            warnings.warn(f"session {sid} has no segments; skipped", stacklevel=2)
            continue
        x = np.stack([np.asarray(getattr(m, "values", m), dtype=np.float64) for m in mats])
        if checkpoint.standardizer is not None:
            x = apply_acf_standardizer(checkpoint.standardizer, x)
        _, emb = predict_logits(model, x.astype(model.dtype))
        out[sid] = emb.astype(np.float64)
    return out


# -- session LSTM training ----------------------------------------------------

def session_logits(model: SessionLstm, seqs: Sequence[np.ndarray], batch_size: int = 128) -> np.ndarray:
    out = []
    for a in range(0, len(seqs), batch_size):
        x, mask = pad_sequences(seqs[a:a + batch_size], model.dtype)
        out.append(model.forward(x, mask, train=False).data)
    return np.concatenate(out)


def train_session_model(
    model: SessionLstm,
    train_seqs: Sequence[np.ndarray],
    train_y: Sequence[int],
    val_seqs: Sequence[np.ndarray],
    val_y: Sequence[int],
    cfg: TrainConfig = TrainConfig(learning_rate="lstm"),
) -> tuple[Checkpoint, History]:
    """Adam over padded, masked session batches of segment embeddings."""
    y_tr = _check_labels(train_y, "training")
    y_va = _check_labels(val_y, "validation")
    for s in list(train_seqs) + list(val_seqs):
        if np.ndim(s) != 2 or s.shape[1] != model.cfg.input_size:
            raise ShapeError(f"embedding width {np.shape(s)} does not match input size {model.cfg.input_size}")
    weights = cfg.resolve_weights(y_tr)
    rng = np.random.default_rng(cfg.seed)
    params = list(model.named_parameters())
    adam = AdamState(learning_rate=LSTM_LR_START)

    def train_epoch(epoch, lr):
        adam.learning_rate = lr
        order = rng.permutation(len(train_seqs))
        total = 0.0
        for a in range(0, len(order), cfg.batch_size):
            idx = order[a:a + cfg.batch_size]
            x, mask = pad_sequences([train_seqs[k] for k in idx], model.dtype)
            model.zero_grad()
            loss = softmax_cross_entropy(model.forward(x, mask, train=True, rng=rng), y_tr[idx], weights)
            loss.backward()
            adam_step(params, adam)
            total += float(loss.data) * len(idx)
        return total / len(order)

    def validate():
        logits = session_logits(model, val_seqs)
        return _weighted_loss(logits, y_va, weights), _uar(y_va, logits.argmax(axis=1))

    history = fit_loop(train_epoch, validate, cfg, model.state_dict, model.load_state_dict)
    ck = Checkpoint(model.kind, model_config_dict(model), model.state_dict(), model.precision, cfg.seed,
                    None, adam, history, {"class_weights": [float(v) for v in weights]})
    return ck, history


def session_probabilities(model: SessionLstm, seqs: Sequence[np.ndarray]) -> np.ndarray:
    return softmax(session_logits(model, seqs).astype(np.float64))
