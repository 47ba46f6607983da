"""Training loop and evaluation for the toy architectures."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import ops
from .data import DatasetSplit, GestureSample, RadarSequence, window
from .models import ParameterSet, TrainedModel, build_arch
from .rng import STREAM_DROPOUT, STREAM_SHUFFLE, rng_for
from .tensor import Tape, Tensor, backward


class TrainingDivergedError(RuntimeError):
    def __init__(self, epoch: int):
        super().__init__(f"non-finite loss at epoch {epoch}")
        self.epoch = epoch


@dataclass(frozen=True)
class Hyperparams:
    lr: float = 1e-3
    epochs: int = 20
    batch_size: int = 16
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    dropout: float = 0.0
    seed: int = 0
    precision: str = "float32"

    def validate(self) -> None:
        if self.lr <= 0:
            raise ValueError(f"learning rate must be positive, got {self.lr}")
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ValueError("batch size must be >= 1")
        if self.precision not in ("float32", "float64"):
            raise ValueError(f"unknown precision {self.precision!r}")


# Per-architecture defaults at desk scale.  The two deeper/recurrent
# families need a larger step than their full-size counterparts would use
# to converge within a short epoch budget.
DEFAULT_HYPERS = {
    "A-mini": Hyperparams(lr=1e-3),
    "R-mini": Hyperparams(lr=1e-4),
    "L-mini": Hyperparams(lr=1e-4),
}


class AdamState:
    """First/second moment accumulators plus the shared step counter."""

    def __init__(self):
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.t = 0


def adam_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray],
              state: AdamState, hyper: Hyperparams) -> None:
    """One bias-corrected adaptive-moment update, in place."""
    state.t += 1
    b1, b2 = hyper.beta1, hyper.beta2
    c1 = 1.0 - b1 ** state.t
    c2 = 1.0 - b2 ** state.t
    for name, g in grads.items():
        p = params[name]
        if g.shape != p.shape:
            raise ops.ShapeError(f"gradient shape {g.shape} does not match parameter "
                                 f"{name} shape {p.shape}")
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        v = state.v[name]
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * (g * g)
        p -= hyper.lr * (m / c1) / (np.sqrt(v / c2) + hyper.eps)


@dataclass
class Metrics:
    per_class: list[float]
    total: float
    counts: list[int]

    def as_dict(self) -> dict:
        return {"per_class": self.per_class, "total": self.total, "counts": self.counts}


def _predict(arch, ps: ParameterSet, frames: np.ndarray, batch_size: int = 64) -> np.ndarray:
    preds = []
    for i in range(0, frames.shape[0], batch_size):
        logits = arch.forward(ps, Tensor(frames[i:i + batch_size]), train=False)
        preds.append(np.argmax(logits.data, axis=1))
    return np.concatenate(preds) if preds else np.zeros(0, dtype=np.int64)


def accuracy_metrics(preds: np.ndarray, labels: np.ndarray, num_classes: int = 6) -> Metrics:
    if labels.size == 0:
        raise ValueError("cannot evaluate an empty partition")
    per_class, counts = [], []
    for c in range(num_classes):
        mask = labels == c
        counts.append(int(mask.sum()))
        per_class.append(float((preds[mask] == c).mean()) if mask.any() else 0.0)
    return Metrics(per_class, float((preds == labels).mean()), counts)


def evaluate(model: TrainedModel, sequences: list[RadarSequence]) -> Metrics:
    """Per-class and total accuracy of a trained model on windowed data."""
    if not sequences:
        raise ValueError("cannot evaluate an empty partition")
    arch = build_arch(model.arch_id, model.input_shape, model.num_classes)
    frames = np.stack([s.frames for s in sequences])
    labels = np.array([s.label for s in sequences])
    preds = _predict(arch, model.params, frames)
    return accuracy_metrics(preds, labels, model.num_classes)


def _partition_sequences(samples, split: DatasetSplit, part: str, length: int,
                         padding: np.ndarray) -> list[RadarSequence]:
    by_id = {s.sample_id: s for s in samples}
    return [window(by_id[i], length, padding) for i in split.partitions[part]]


def train(arch_id: str, samples: list[GestureSample], split: DatasetSplit,
          hyper: Hyperparams, padding: np.ndarray, window_length: int,
          num_classes: int = 6, metrics_csv: str | Path | None = None) -> TrainedModel:
    """Train one architecture on a subject split.

    Minimizes mean cross-entropy with adaptive-moment updates, tracks
    validation accuracy each epoch, and returns the parameters of the best
    validation epoch.  Fully determined by (arch, split, hyper, seed).
    """
    hyper.validate()
    for part in ("train", "val"):
        if not split.partitions.get(part):
            raise ValueError(f"split {split.split_id!r} has an empty {part!r} partition")

    h, w = padding.shape
    arch = build_arch(arch_id, (window_length, h, w), num_classes)
    dtype = np.float32 if hyper.precision == "float32" else np.float64
    ps = arch.init_params(hyper.seed, dtype=dtype)

    train_seqs = _partition_sequences(samples, split, "train", window_length, padding)
    val_seqs = _partition_sequences(samples, split, "val", window_length, padding)
    x_train = np.stack([s.frames for s in train_seqs]).astype(dtype)
    y_train = np.array([s.label for s in train_seqs], dtype=np.int64)
    x_val = np.stack([s.frames for s in val_seqs]).astype(dtype)
    y_val = np.array([s.label for s in val_seqs], dtype=np.int64)

    state = AdamState()
    rows = []
    best_acc, best_params, best_epoch = -1.0, ps.copy(), 0
    n = x_train.shape[0]

    for epoch in range(1, hyper.epochs + 1):
        order = rng_for(hyper.seed, STREAM_SHUFFLE, epoch).permutation(n)
        drop_rng = rng_for(hyper.seed, STREAM_DROPOUT, epoch) if hyper.dropout > 0 else None
        losses, hits, total = [], 0, 0
        for i in range(0, n, hyper.batch_size):
            idx = order[i:i + hyper.batch_size]
            xb, yb = x_train[idx], y_train[idx]
            ps.zero_grads()
            with Tape() as tape:
                logits = arch.forward(ps, Tensor(xb), train=True,
                                      dropout_rate=hyper.dropout, rng=drop_rng)
                loss = ops.cross_entropy(logits, yb, reduction="mean")
            if not np.isfinite(loss.item()):
                raise TrainingDivergedError(epoch)
            backward(tape, loss)
            losses.append(loss.item())
            hits += int((np.argmax(logits.data, axis=1) == yb).sum())
            total += len(idx)
            grads = {name: t.grad for name, t in ps.tensors.items() if t.grad is not None}
            adam_step({name: ps.tensors[name].data for name in grads}, grads, state, hyper)

        train_loss = float(np.mean(losses))
        train_acc = hits / total
        val_preds = _predict(arch, ps, x_val)
        val_metrics = accuracy_metrics(val_preds, y_val, num_classes)
        val_loss = _mean_ce(arch, ps, x_val, y_val)
        rows.append([epoch, "train", train_loss, train_acc] + [""] * num_classes)
        rows.append([epoch, "val", val_loss, val_metrics.total] + val_metrics.per_class)
        if val_metrics.total > best_acc:
            best_acc, best_params, best_epoch = val_metrics.total, ps.copy(), epoch

    if metrics_csv is not None:
        _write_metrics_csv(metrics_csv, rows, num_classes)

    model = TrainedModel(
        arch_id=arch_id, input_shape=(window_length, h, w), num_classes=num_classes,
        split_id=split.split_id, seed=hyper.seed, params=best_params,
        precision=hyper.precision,
        metrics={"best_val_acc": best_acc, "best_epoch": best_epoch,
                 "final_train_loss": train_loss},
    )
    val_final = evaluate(model, val_seqs)
    model.metrics["val"] = val_final.as_dict()
    return model


def _mean_ce(arch, ps, frames, labels, batch_size: int = 64) -> float:
    total = 0.0
    for i in range(0, frames.shape[0], batch_size):
        logits = arch.forward(ps, Tensor(frames[i:i + batch_size]), train=False)
        loss = ops.cross_entropy(logits, labels[i:i + batch_size], reduction="sum")
        total += loss.item()
    return total / frames.shape[0]


def _write_metrics_csv(path, rows, num_classes):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "split", "loss", "acc_total"] +
                        [f"acc_class{c}" for c in range(num_classes)])
        writer.writerows(rows)
