"""Training loop and evaluation for the sentiment classifier.

Stratified 70/30 split, mini-batch Adam with global gradient-norm clipping,
per-epoch history, and a best-validation-accuracy model snapshot. Batch
gradients are accumulated as sums by the backward pass and averaged before
the optimizer step.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .lstm import (
    LstmHyperparams,
    LstmModel,
    backward_batch,
    forward_batch,
    init_model,
    loss_batch,
)
from .textprep import Vocabulary, encode, tokenize
from .types import POSITIVE, RecordEnvelope

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8

VALID_FRACTION = 0.3


class TrainDataError(Exception):
    pass


@dataclass(frozen=True)
class EpochStats:
    epoch: int
    train_loss: float
    train_accuracy: float
    valid_loss: float
    valid_accuracy: float

    def to_dict(self) -> dict:
        return {
            "epoch": self.epoch,
            "train_loss": self.train_loss,
            "train_accuracy": self.train_accuracy,
            "valid_loss": self.valid_loss,
            "valid_accuracy": self.valid_accuracy,
        }


@dataclass
class TrainHistory:
    epochs: list[EpochStats] = field(default_factory=list)

    def to_list(self) -> list[dict]:
        return [e.to_dict() for e in self.epochs]

    @classmethod
    def from_list(cls, rows: list[dict]) -> "TrainHistory":
        return cls(epochs=[EpochStats(**row) for row in rows])


@dataclass(frozen=True)
class EvalReport:
    """Per-class recall plus overall accuracy, Table-style."""

    accuracy_positive: float
    accuracy_negative: float
    accuracy_total: float
    tp: int
    fn: int
    tn: int
    fp: int

    @property
    def total(self) -> int:
        return self.tp + self.fn + self.tn + self.fp

    def to_dict(self) -> dict:
        return {
            "accuracy_positive": self.accuracy_positive,
            "accuracy_negative": self.accuracy_negative,
            "accuracy_total": self.accuracy_total,
            "confusion": {"tp": self.tp, "fn": self.fn, "tn": self.tn, "fp": self.fp},
        }

    def to_text(self) -> str:
        rows = [
            ("Categories", "Accuracy"),
            ("Positive", f"{self.accuracy_positive * 100:.1f}%"),
            ("Negative", f"{self.accuracy_negative * 100:.1f}%"),
            ("Total", f"{self.accuracy_total * 100:.1f}%"),
        ]
        width = max(len(r[0]) for r in rows) + 2
        return "\n".join(f"{cat:<{width}}{acc}" for cat, acc in rows)


def report_from_confusion(tp: int, fn: int, tn: int, fp: int) -> EvalReport:
    n = tp + fn + tn + fp
    return EvalReport(
        accuracy_positive=tp / (tp + fn) if (tp + fn) else 0.0,
        accuracy_negative=tn / (tn + fp) if (tn + fp) else 0.0,
        accuracy_total=(tp + tn) / n if n else 0.0,
        tp=tp,
        fn=fn,
        tn=tn,
        fp=fp,
    )


def encode_dataset(
    records: Sequence[RecordEnvelope], vocab: Vocabulary, seq_len: int
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(ids, lengths, labels) arrays; label positive -> 1, negative -> 0."""
    n = len(records)
    ids = np.zeros((n, seq_len), dtype=np.int64)
    lengths = np.zeros(n, dtype=np.int64)
    labels = np.zeros(n, dtype=np.int64)
    for row, rec in enumerate(records):
        seq = encode(tokenize(rec.text), vocab, seq_len)
        ids[row, :] = seq.ids
        lengths[row] = seq.true_length
        labels[row] = 1 if rec.label == POSITIVE else 0
    return ids, lengths, labels


def stratified_split(
    records: Sequence[RecordEnvelope], seed: int, valid_fraction: float = VALID_FRACTION
) -> tuple[list[RecordEnvelope], list[RecordEnvelope]]:
    """Shuffled per-class split preserving label proportions within +/-1."""
    rng = np.random.default_rng(seed)
    by_label: dict[Optional[str], list[RecordEnvelope]] = {}
    for rec in records:
        by_label.setdefault(rec.label, []).append(rec)
    train: list[RecordEnvelope] = []
    valid: list[RecordEnvelope] = []
    for label in sorted(by_label, key=str):
        group = by_label[label]
        order = rng.permutation(len(group))
        n_train = int(round((1.0 - valid_fraction) * len(group)))
        for pos, idx in enumerate(order):
            (train if pos < n_train else valid).append(group[idx])
    return train, valid


def stratified_take(
    records: Sequence[RecordEnvelope], n: int
) -> list[RecordEnvelope]:
    """First n records, per-class quota proportional to the full composition.

    Keeps file order inside each class, so the subsample is reproducible
    without a seed.
    """
    if n >= len(records):
        return list(records)
    by_label: dict[Optional[str], int] = {}
    for rec in records:
        by_label[rec.label] = by_label.get(rec.label, 0) + 1
    total = len(records)
    quota = {label: int(round(n * count / total)) for label, count in by_label.items()}
    # rounding can over/undershoot by 1; settle the difference on the
    # largest class so the output has exactly n records
    drift = n - sum(quota.values())
    if drift != 0:
        biggest = max(by_label, key=lambda k: by_label[k])
        quota[biggest] += drift
    taken: dict[Optional[str], int] = {label: 0 for label in quota}
    out: list[RecordEnvelope] = []
    for rec in records:
        if taken[rec.label] < quota[rec.label]:
            taken[rec.label] += 1
            out.append(rec)
        if len(out) == n:
            break
    return out


class AdamState:
    def __init__(self, model: LstmModel):
        self.m = {k: np.zeros_like(v) for k, v in model.params().items()}
        self.v = {k: np.zeros_like(v) for k, v in model.params().items()}
        self.t = 0

    def step(self, model: LstmModel, grads: dict[str, np.ndarray], lr: float) -> None:
        self.t += 1
        bias1 = 1.0 - ADAM_BETA1**self.t
        bias2 = 1.0 - ADAM_BETA2**self.t
        for key, param in model.params().items():
            g = grads[key]
            self.m[key] = ADAM_BETA1 * self.m[key] + (1.0 - ADAM_BETA1) * g
            self.v[key] = ADAM_BETA2 * self.v[key] + (1.0 - ADAM_BETA2) * (g * g)
            m_hat = self.m[key] / bias1
            v_hat = self.v[key] / bias2
            param -= (lr * m_hat / (np.sqrt(v_hat) + ADAM_EPS)).astype(param.dtype)
        model.E[0, :] = 0.0  # padding row stays frozen


def clip_gradients(grads: dict[str, np.ndarray], clip_norm: float) -> float:
    """Scale all gradients so the global L2 norm is at most clip_norm.
    Returns the pre-clip norm."""
    total = float(np.sqrt(sum(float((g.astype(np.float64) ** 2).sum()) for g in grads.values())))
    if total > clip_norm and total > 0.0:
        scale = clip_norm / total
        for g in grads.values():
            g *= scale
    return total


def _pass_metrics(
    model: LstmModel, ids: np.ndarray, lengths: np.ndarray, labels: np.ndarray,
    batch_size: int = 1024,
) -> tuple[float, float]:
    """(mean loss, accuracy) of a forward-only pass."""
    n = ids.shape[0]
    if n == 0:
        return 0.0, 0.0
    total_loss = 0.0
    correct = 0
    for start in range(0, n, batch_size):
        sl = slice(start, min(start + batch_size, n))
        cache = forward_batch(model, ids[sl], lengths[sl])
        total_loss += float(loss_batch(cache.p, labels[sl]).sum())
        correct += int(((cache.p >= 0.5).astype(np.int64) == labels[sl]).sum())
    return total_loss / n, correct / n


def train(
    records: Sequence[RecordEnvelope],
    hyper: LstmHyperparams,
    vocab: Vocabulary,
    dtype=np.float32,
    log=None,
) -> tuple[LstmModel, TrainHistory]:
    """Train on a labeled dataset; returns the best-validation-accuracy model.

    Raises TrainDataError if the dataset is too small or single-class.
    """
    if len(records) < 10:
        raise TrainDataError(f"need at least 10 labeled records, got {len(records)}")
    labels_present = {rec.label for rec in records}
    if len(labels_present) < 2:
        raise TrainDataError(f"dataset has a single class: {labels_present}")

    train_recs, valid_recs = stratified_split(records, seed=hyper.seed)
    train_ids, train_lens, train_y = encode_dataset(train_recs, vocab, hyper.seq_len)
    valid_ids, valid_lens, valid_y = encode_dataset(valid_recs, vocab, hyper.seq_len)

    model = init_model(hyper, dtype=dtype)
    adam = AdamState(model)
    history = TrainHistory()
    best = model.copy()
    best_acc = -1.0
    rng = np.random.default_rng(hyper.seed ^ 0x5EED)

    n = train_ids.shape[0]
    for epoch in range(1, hyper.epochs + 1):
        order = rng.permutation(n)
        epoch_loss = 0.0
        epoch_correct = 0
        for start in range(0, n, hyper.batch_size):
            pick = order[start : start + hyper.batch_size]
            ids, lens, y = train_ids[pick], train_lens[pick], train_y[pick]
            cache = forward_batch(model, ids, lens)
            epoch_loss += float(loss_batch(cache.p, y).sum())
            epoch_correct += int(((cache.p >= 0.5).astype(np.int64) == y).sum())
            grads = backward_batch(model, cache, y)
            for g in grads.values():
                g /= len(pick)  # summed -> mean
            clip_gradients(grads, hyper.clip_norm)
            adam.step(model, grads, hyper.learning_rate)
        valid_loss, valid_acc = _pass_metrics(model, valid_ids, valid_lens, valid_y)
        stats = EpochStats(
            epoch=epoch,
            train_loss=epoch_loss / n,
            train_accuracy=epoch_correct / n,
            valid_loss=valid_loss,
            valid_accuracy=valid_acc,
        )
        history.epochs.append(stats)
        if log is not None:
            log(stats)
        if valid_acc > best_acc:
            best_acc = valid_acc
            best = model.copy()
    return best, history


def predict_batch(
    model: LstmModel, ids: np.ndarray, lengths: np.ndarray, batch_size: int = 1024
) -> np.ndarray:
    """Positive-class probabilities for pre-encoded sequences."""
    out = np.empty(ids.shape[0], dtype=np.float64)
    for start in range(0, ids.shape[0], batch_size):
        sl = slice(start, min(start + batch_size, ids.shape[0]))
        out[sl] = forward_batch(model, ids[sl], lengths[sl]).p
    return out


def evaluate(
    model: LstmModel, records: Sequence[RecordEnvelope], vocab: Vocabulary
) -> EvalReport:
    """Score a labeled dataset; prediction is positive iff p >= 0.5."""
    if not records:
        raise TrainDataError("cannot evaluate an empty dataset")
    ids, lengths, labels = encode_dataset(records, vocab, model.hyper.seq_len)
    p = predict_batch(model, ids, lengths)
    pred = (p >= 0.5).astype(np.int64)
    tp = int(((pred == 1) & (labels == 1)).sum())
    fn = int(((pred == 0) & (labels == 1)).sum())
    tn = int(((pred == 0) & (labels == 0)).sum())
    fp = int(((pred == 1) & (labels == 0)).sum())
    return report_from_confusion(tp=tp, fn=fn, tn=tn, fp=fp)
