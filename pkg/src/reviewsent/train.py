"""Fine-tuning loop: cross-entropy, Adam, per-epoch validation and early stopping."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from .corpus import RecordSet
from .model import MappingError, ModelConfig, label_text, map_label
from .model.layers import apply_dropout, softmax
from .model.network import (
    WeightBundle,
    classifier_forward,
    decoder_start_id,
    greedy_decode_ids,
    init_weights,
    pad_batch,
    seq2seq_forward,
)
from .tokenizer import TokenSequence, byte_decode, byte_encode

log = logging.getLogger(__name__)

__all__ = [
    "EpochRecord",
    "TrainConfig",
    "TrainingError",
    "apply_dropout",
    "cross_entropy",
    "train_loop",
]

Tokenize = Callable[[str], TokenSequence]
HEAD_PARAMS = ("pre_classifier.", "classifier.", "lm_head.")


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    max_epochs: int = 12
    batch_size: int = 16
    learning_rate: float = 3e-4
    patience: int = 2
    regime: str = "full"
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if self.max_epochs < 1 or self.patience < 1 or self.batch_size < 1:
            raise ValueError("max_epochs, patience and batch_size must be >= 1")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if self.regime not in ("full", "head_only"):
            raise ValueError(f"unknown regime {self.regime!r}")

    @classmethod
    def bert_reference(cls, **kw) -> "TrainConfig":
        return cls(**{"max_epochs": 12, "learning_rate": 2e-5, **kw})

    @classmethod
    def t5_reference(cls, **kw) -> "TrainConfig":
        return cls(**{"max_epochs": 5, "learning_rate": 2e-5, **kw})


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    train_loss: float
    val_loss: float
    val_accuracy: float

    def to_json(self) -> dict:
        return asdict(self)


def cross_entropy(logits: np.ndarray, label: int) -> tuple[float, np.ndarray]:
    logits = np.asarray(logits, dtype=np.float64)
    if not 0 <= label < logits.shape[-1]:
        raise ValueError(f"label {label} outside 0..{logits.shape[-1] - 1}")
    shifted = logits - logits.max()
    logz = math.log(np.exp(shifted).sum())
    loss = logz - shifted[label]
    grad = softmax(logits)
    grad[label] -= 1.0
    return float(loss), grad


def batch_cross_entropy(logits: np.ndarray, labels: np.ndarray,
                        weights: np.ndarray | None = None) -> tuple[float, np.ndarray]:
    """Mean cross-entropy over rows of ``logits[..., C]``; ``weights`` masks rows out."""
    flat = logits.reshape(-1, logits.shape[-1])
    lab = labels.reshape(-1)
    wts = np.ones(len(lab)) if weights is None else weights.reshape(-1).astype(np.float64)
    denom = wts.sum()
    shifted = flat - flat.max(axis=1, keepdims=True)
    logz = np.log(np.exp(shifted).sum(axis=1))
    losses = logz - shifted[np.arange(len(lab)), lab]
    loss = float((losses * wts).sum() / denom)
    grad = softmax(flat)
    grad[np.arange(len(lab)), lab] -= 1.0
    grad *= (wts / denom)[:, None]
    return loss, grad.reshape(logits.shape)


# ---------------------------------------------------------------------------
# Batches


@dataclass
class Example:
    src: list[int]
    label: int  # class index 0..4


def make_examples(rs: RecordSet, tokenize: Tokenize, cfg: ModelConfig) -> list[Example]:
    out = []
    for r in rs:
        seq = tokenize(r.text).truncated(cfg.max_positions, keep_last=True)
        if seq.ids and max(seq.ids) >= cfg.vocab_size:
            raise ValueError(f"tokenizer produced id {max(seq.ids)} >= vocab_size {cfg.vocab_size}")
        out.append(Example(list(seq.ids), r.rating - 1))
    return out


def _target_ids(label: int) -> list[int]:
    return list(byte_encode(label_text(label + 1), add_eos=True).ids)


def batch_loss(w: WeightBundle, batch: Sequence[Example], cfg: ModelConfig, training: bool = False,
               rng=None, grads: dict | None = None) -> float:
    """Mean loss over ``batch``; fills ``grads`` when given."""
    src, src_valid = pad_batch([e.src for e in batch])
    if cfg.mode == "encoder_classifier":
        logits, backward = classifier_forward(src, src_valid, w, cfg, training, rng, grads)
        labels = np.array([e.label for e in batch])
        loss, dlogits = batch_cross_entropy(logits, labels)
    else:
        targets = [_target_ids(e.label) for e in batch]
        dec_in = [[decoder_start_id(), *t[:-1]] for t in targets]
        dec, dec_valid = pad_batch(dec_in)
        tgt, tgt_valid = pad_batch(targets)
        logits, backward = seq2seq_forward(src, src_valid, dec, dec_valid, w, cfg, training, rng, grads)
        loss, dlogits = batch_cross_entropy(logits, tgt, tgt_valid)
    if grads is not None:
        backward(dlogits)
    return loss


def predict_ids(w: WeightBundle, examples: Sequence[Example], cfg: ModelConfig,
                batch_size: int = 64) -> list[int | None]:
    """Predicted class indices; None marks a text-to-text output that maps to no label."""
    preds: list[int | None] = []
    if cfg.mode == "encoder_classifier":
        for i in range(0, len(examples), batch_size):
            chunk = examples[i:i + batch_size]
            src, valid = pad_batch([e.src for e in chunk])
            logits, _ = classifier_forward(src, valid, w, cfg)
            preds.extend(int(k) for k in np.argmax(logits, axis=1))
    else:
        for e in examples:
            text = byte_decode(greedy_decode_ids(e.src, w, cfg, max_len=4), errors="replace")
            try:
                preds.append(map_label(text) - 1)
            except MappingError:
                preds.append(None)
    return preds


def evaluate_split(w: WeightBundle, examples: Sequence[Example], cfg: ModelConfig,
                   batch_size: int = 64) -> tuple[float, float]:
    total = 0.0
    for i in range(0, len(examples), batch_size):
        chunk = examples[i:i + batch_size]
        total += batch_loss(w, chunk, cfg) * len(chunk)
    preds = predict_ids(w, examples, cfg, batch_size)
    acc = sum(p == e.label for p, e in zip(preds, examples)) / len(examples)
    return total / len(examples), acc


# ---------------------------------------------------------------------------
# Optimizer and stopping rule


class Adam:
    def __init__(self, params: WeightBundle, lr: float, beta1=0.9, beta2=0.999, eps=1e-8,
                 trainable: Iterable[str] | None = None):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.trainable = sorted(params if trainable is None else trainable)
        self.m = {k: np.zeros_like(params[k]) for k in self.trainable}
        self.v = {k: np.zeros_like(params[k]) for k in self.trainable}
        self.t = 0

    def step(self, params: WeightBundle, grads: dict) -> None:
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for k in self.trainable:
            g = grads.get(k)
            if g is None:
                continue
            self.m[k] = self.beta1 * self.m[k] + (1.0 - self.beta1) * g
            self.v[k] = self.beta2 * self.v[k] + (1.0 - self.beta2) * g * g
            params[k] -= self.lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)


class EarlyStopping:
    """Stop once validation loss has risen for ``patience`` consecutive epochs."""

    def __init__(self, patience: int):
        self.patience = patience
        self.rises = 0
        self.prev: float | None = None
        self.best_loss = math.inf
        self.best_epoch: int | None = None
        self.best_weights: WeightBundle | None = None

    def update(self, epoch: int, val_loss: float, weights: WeightBundle) -> bool:
        if val_loss < self.best_loss:
            self.best_loss, self.best_epoch = val_loss, epoch
            self.best_weights = {k: v.copy() for k, v in weights.items()}
        self.rises = self.rises + 1 if self.prev is not None and val_loss > self.prev else 0
        self.prev = val_loss
        return self.rises >= self.patience


def head_parameters(w: WeightBundle) -> list[str]:
    return [k for k in w if k.startswith(HEAD_PARAMS)]


@dataclass
class TrainResult:
    weights: WeightBundle
    history: list[EpochRecord]
    stop_reason: str
    best_epoch: int

    def __iter__(self):
        # allows ``weights, history, stop_reason = train_loop(...)``
        return iter((self.weights, self.history, self.stop_reason))


def train_loop(train: RecordSet, eval_set: RecordSet, tokenize: Tokenize, cfg: ModelConfig,
               tcfg: TrainConfig, init: WeightBundle | None = None,
               validate: Callable[[WeightBundle, int], tuple[float, float]] | None = None,
               on_epoch_end: Callable[[EpochRecord, WeightBundle], None] | None = None,
               ) -> TrainResult:
    """Train from ``init`` (or a seeded random init) and return the best-val-loss weights.

    ``validate(weights, epoch) -> (val_loss, val_accuracy)`` replaces the
    default evaluation on ``eval_set``; used to script stopping behaviour.
    ``on_epoch_end(record, weights)`` may return True to end training early.
    """
    if not len(train) or not len(eval_set):
        raise ValueError("train and eval sets must be non-empty")
    train_ex = make_examples(train, tokenize, cfg)
    eval_ex = make_examples(eval_set, tokenize, cfg)
    w = init_weights(cfg, tcfg.seed) if init is None else {k: v.copy() for k, v in init.items()}
    rng = np.random.default_rng(tcfg.seed)
    trainable = head_parameters(w) if tcfg.regime == "head_only" else None
    opt = Adam(w, tcfg.learning_rate, tcfg.beta1, tcfg.beta2, tcfg.eps, trainable)
    stopper = EarlyStopping(tcfg.patience)
    history: list[EpochRecord] = []
    stop_reason = "max_epochs"

    for epoch in range(1, tcfg.max_epochs + 1):
        order = rng.permutation(len(train_ex))
        seen, running = 0, 0.0
        for b, start in enumerate(range(0, len(order), tcfg.batch_size)):
            batch = [train_ex[i] for i in order[start:start + tcfg.batch_size]]
            grads: dict = {}
            loss = batch_loss(w, batch, cfg, training=True, rng=rng, grads=grads)
            if not math.isfinite(loss):
                raise TrainingError(f"non-finite loss {loss} at epoch {epoch}, batch {b}")
            opt.step(w, grads)
            running += loss * len(batch)
            seen += len(batch)
        if validate is None:
            val_loss, val_acc = evaluate_split(w, eval_ex, cfg)
        else:
            val_loss, val_acc = validate(w, epoch)
        rec = EpochRecord(epoch, running / seen, float(val_loss), float(val_acc))
        history.append(rec)
        log.info("epoch %d train_loss=%.4f val_loss=%.4f val_acc=%.4f",
                 epoch, rec.train_loss, rec.val_loss, rec.val_accuracy)
        stop_now = on_epoch_end is not None and on_epoch_end(rec, w) is True
        if stopper.update(epoch, rec.val_loss, w):
            stop_reason = "early_stop"
            break
        if stop_now:
            stop_reason = "callback"
            break

    return TrainResult(stopper.best_weights, history, stop_reason, stopper.best_epoch)


def write_history(history: Sequence[EpochRecord], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in history:
            fh.write(json.dumps(rec.to_json(), sort_keys=True) + "\n")


def predict_records(rs: RecordSet, tokenize: Tokenize, w: WeightBundle,
                    cfg: ModelConfig) -> list[dict]:
    """Prediction log rows ``{id, true, pred}`` with 1-based ratings (pred None if unmapped)."""
    examples = make_examples(rs, tokenize, cfg)
    preds = predict_ids(w, examples, cfg)
    return [{"id": r.id, "true": r.rating, "pred": None if p is None else p + 1}
            for r, p in zip(rs, preds)]

