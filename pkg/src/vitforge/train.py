"""Cross-entropy loss, Adam, the epoch loop with early stopping, evaluation.

The loop monitors test loss with a strict improvement threshold, restores
the best-loss parameter snapshot on stop, and optionally streams epoch rows
to `log.jsonl` alongside `best.ckpt` / `last.ckpt` in a run directory.
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import checkpoint
from .errors import ConfigError, DimensionError, LabelError, NumericalError
from .metrics import MetricsReport, compute_report
from .model import ViT, predict
from .preprocess import LabeledDataset, TensorDataset, prefetch, preprocess_dataset
from .tensor import Tape, Tensor, backward, record_op

# Test loss must drop by more than this to count as an improvement.
IMPROVEMENT_EPS = 1e-6


@dataclass
class TrainConfig:
    """Optimization hyperparameters."""

    epochs: int = 50
    batch_size: int = 32
    lr: float = 1e-4
    patience: int = 10
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.patience < 1:
            raise ConfigError(f"patience must be >= 1, got {self.patience}")
        if not self.lr > 0:
            raise ConfigError(f"lr must be positive, got {self.lr}")
        for name in ("beta1", "beta2"):
            b = getattr(self, name)
            if not 0.0 <= b < 1.0:
                raise ConfigError(f"{name} must be in [0, 1), got {b}")


@dataclass
class EpochLog:
    """One epoch of training/testing measurements (accuracies in percent)."""

    epoch: int
    train_loss: float
    train_accuracy: float
    test_loss: float
    test_accuracy: float
    wall_time: float

    def to_json_line(self) -> str:
        # wall_time is intentionally excluded so two seeded runs produce
        # byte-identical log files.
        return json.dumps(
            {
                "epoch": self.epoch,
                "train_loss": self.train_loss,
                "train_accuracy": self.train_accuracy,
                "test_loss": self.test_loss,
                "test_accuracy": self.test_accuracy,
            },
            sort_keys=True,
        )


def cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean negative log-likelihood of the true classes.

    Computed in the fused log-sum-exp form (logit_true - logsumexp(logits)),
    so probabilities are never materialized and extreme logits cannot
    overflow.
    """
    labels = np.asarray(labels, dtype=np.int64)
    if logits.ndim != 2:
        raise DimensionError(f"cross_entropy expects B x C logits, got {logits.shape}")
    b, c = logits.shape
    if labels.shape != (b,):
        raise DimensionError(f"{b} logit rows but labels shape {labels.shape}")
    bad = np.flatnonzero((labels < 0) | (labels >= c))
    if bad.size:
        raise LabelError(f"label {labels[bad[0]]} at row {bad[0]} outside [0, {c})")

    z = logits.data
    m = z.max(axis=1, keepdims=True)
    lse = m[:, 0] + np.log(np.exp(z - m).sum(axis=1))
    rows = np.arange(b)
    loss_val = float(np.mean(lse - z[rows, labels]))
    out = Tensor(np.asarray(loss_val, dtype=z.dtype), requires_grad=logits.requires_grad)

    def vjp(g):
        p = np.exp(z - m)
        p /= p.sum(axis=1, keepdims=True)
        p[rows, labels] -= 1.0
        return (p * (g / b),)

    record_op(out, (logits,), vjp)
    return out


class AdamState:
    """Per-parameter first/second moment estimates plus the step counter."""

    def __init__(self, params: dict[str, Tensor]):
        self.m = {n: np.zeros_like(t.data) for n, t in params.items()}
        self.v = {n: np.zeros_like(t.data) for n, t in params.items()}
        self.t = 0


def adam_step(params: dict[str, Tensor], grads: dict[str, np.ndarray],
              state: AdamState, cfg: TrainConfig) -> tuple[dict[str, Tensor], AdamState]:
    """One bias-corrected Adam update, applied in place."""
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.data.shape:
            raise DimensionError(
                f"gradient for {name!r} has shape {g.shape}, parameter is {p.data.shape}"
            )
    state.t += 1
    b1, b2 = cfg.beta1, cfg.beta2
    c1 = 1.0 - b1 ** state.t
    c2 = 1.0 - b2 ** state.t
    for name, p in params.items():
        g = grads[name]
        m = state.m[name]
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p.data -= cfg.lr * (m / c1) / (np.sqrt(v / c2) + cfg.eps)
    return params, state


class EarlyStopper:
    """Patience-based stopping on a monitored loss.

    An epoch improves only when loss < best - IMPROVEMENT_EPS; after
    `patience` consecutive non-improving epochs, training stops.
    """

    def __init__(self, patience: int):
        self.patience = patience
        self.best = math.inf
        self.best_epoch = 0
        self.bad_epochs = 0

    def update(self, epoch: int, loss: float) -> bool:
        if loss < self.best - IMPROVEMENT_EPS:
            self.best = loss
            self.best_epoch = epoch
            self.bad_epochs = 0
            return True
        self.bad_epochs += 1
        return False

    @property
    def should_stop(self) -> bool:
        return self.bad_epochs >= self.patience


def _as_tensor_dataset(ds, side: int) -> TensorDataset:
    if isinstance(ds, TensorDataset):
        return ds
    if isinstance(ds, LabeledDataset):
        return preprocess_dataset(ds, side)
    raise ConfigError(f"unsupported dataset type {type(ds).__name__}")


def _stable_probs(logits: np.ndarray) -> np.ndarray:
    e = np.exp(logits - logits.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


def evaluate(model: ViT, dataset, batch_size: int = 32,
             positive_class: int = 1) -> tuple[float, MetricsReport]:
    """Loss and full metrics over a dataset; parameters are never mutated."""
    tds = _as_tensor_dataset(dataset, model.cfg.image_size)
    if len(tds) == 0:
        raise ConfigError("cannot evaluate an empty dataset")
    total_loss = 0.0
    preds, probs = [], []
    for batch in tds.batches(batch_size):
        logits = model.forward(batch.images)
        total_loss += cross_entropy(logits, batch.labels).item() * len(batch)
        preds.append(predict(logits))
        probs.append(_stable_probs(logits.data.astype(np.float64)))
    loss = total_loss / len(tds)
    report = compute_report(
        tds.labels, np.concatenate(preds), np.vstack(probs),
        tds.num_classes, positive_class=positive_class,
    )
    return loss, report


def fit(model: ViT, train_set, test_set, cfg: TrainConfig,
        run_dir=None) -> tuple[dict[str, np.ndarray], list[EpochLog]]:
    """Train with Adam and early stopping; return the best parameter
    snapshot (by test loss) and the per-epoch log.

    With `run_dir` set, each epoch appends a row to `log.jsonl` and refreshes
    `last.ckpt`; `best.ckpt` is rewritten whenever the test loss improves.
    """
    train_tds = _as_tensor_dataset(train_set, model.cfg.image_size)
    test_tds = _as_tensor_dataset(test_set, model.cfg.image_size)
    if len(train_tds) == 0 or len(test_tds) == 0:
        raise ConfigError("fit needs non-empty train and test datasets")

    if run_dir is not None:
        run_dir = Path(run_dir)
        run_dir.mkdir(parents=True, exist_ok=True)
        (run_dir / "log.jsonl").write_text("")

    params = model.params.tensors
    state = AdamState(params)
    stopper = EarlyStopper(cfg.patience)
    best_arrays = model.params.copy_arrays()
    logs: list[EpochLog] = []

    for epoch in range(1, cfg.epochs + 1):
        started = time.perf_counter()
        running_loss = 0.0
        correct = 0
        for batch in prefetch(train_tds.batches(cfg.batch_size, cfg.seed, epoch)):
            with Tape() as tape:
                logits = model.forward(batch.images)
                loss = cross_entropy(logits, batch.labels)
            loss_val = loss.item()
            if not math.isfinite(loss_val):
                raise NumericalError(f"non-finite training loss at epoch {epoch}")
            backward(tape, loss, params=params.values())
            adam_step(params, {n: t.grad for n, t in params.items()}, state, cfg)
            running_loss += loss_val * len(batch)
            correct += int((predict(logits) == batch.labels).sum())

        train_loss = running_loss / len(train_tds)
        train_acc = 100.0 * correct / len(train_tds)
        test_loss, report = evaluate(model, test_tds, cfg.batch_size)
        log = EpochLog(epoch, train_loss, train_acc, test_loss, report.accuracy,
                       time.perf_counter() - started)
        logs.append(log)

        improved = stopper.update(epoch, test_loss)
        if improved:
            best_arrays = model.params.copy_arrays()
        if run_dir is not None:
            with open(run_dir / "log.jsonl", "a") as fh:
                fh.write(log.to_json_line() + "\n")
            meta = {
                "config": model.cfg.to_dict(),
                "class_names": model.class_names,
                "epoch": epoch,
                "test_loss": test_loss,
                "test_accuracy": report.accuracy,
            }
            checkpoint.save(run_dir / "last.ckpt", model.params.arrays(), meta)
            if improved:
                checkpoint.save(run_dir / "best.ckpt", best_arrays,
                                {**meta, "best_epoch": stopper.best_epoch})
        if stopper.should_stop:
            break

    model.params.load_arrays(best_arrays)
    return best_arrays, logs
