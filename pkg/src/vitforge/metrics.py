"""Confusion matrix and classification metrics.

All metrics are percentages in [0, 100]. 0/0 cases are reported as
undefined (None) rather than coerced to zero, and undefined classes are
excluded from macro/weighted averages.
"""

from __future__ import annotations

from dataclasses import dataclass

import json
import numpy as np

from .errors import ContractError, DimensionError, LabelError, UndefinedMetricError


def confusion(true_labels, pred_labels, num_classes: int) -> np.ndarray:
    """counts[t][p] = number of samples with true class t predicted as p."""
    t = np.asarray(true_labels, dtype=np.int64)
    p = np.asarray(pred_labels, dtype=np.int64)
    if t.shape != p.shape or t.ndim != 1:
        raise DimensionError(
            f"label vectors must be 1-D and equal length, got {t.shape} and {p.shape}"
        )
    for name, v in (("true", t), ("predicted", p)):
        bad = np.flatnonzero((v < 0) | (v >= num_classes))
        if bad.size:
            raise LabelError(
                f"{name} label {v[bad[0]]} at row {bad[0]} outside [0, {num_classes})"
            )
    cm = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(cm, (t, p), 1)
    return cm


def accuracy(cm: np.ndarray) -> float:
    """100 * correct / total."""
    total = int(cm.sum())
    if total == 0:
        raise UndefinedMetricError("accuracy is undefined on an empty confusion matrix")
    return 100.0 * float(np.trace(cm)) / total


def per_class_recall(cm: np.ndarray) -> list[float | None]:
    """Recall per class (None where the class has no true samples)."""
    out = []
    for c in range(cm.shape[0]):
        support = int(cm[c].sum())
        out.append(None if support == 0 else 100.0 * float(cm[c, c]) / support)
    return out


def balanced_accuracy(cm: np.ndarray) -> float:
    """Unweighted mean of per-class recalls, skipping empty classes."""
    recalls = [r for r in per_class_recall(cm) if r is not None]
    if not recalls:
        raise UndefinedMetricError("balanced accuracy is undefined: no class has samples")
    return float(np.mean(recalls))


@dataclass
class PrecisionRecall:
    precision: list[float | None]
    recall: list[float | None]
    macro_precision: float | None
    macro_recall: float | None
    weighted_precision: float | None
    weighted_recall: float | None


def _aggregate(values: list[float | None], weights: list[int]) -> tuple[float | None, float | None]:
    defined = [(v, w) for v, w in zip(values, weights) if v is not None]
    if not defined:
        return None, None
    macro = float(np.mean([v for v, _ in defined]))
    total = sum(w for _, w in defined)
    weighted = None if total == 0 else float(sum(v * w for v, w in defined) / total)
    return macro, weighted


def precision_recall(cm: np.ndarray) -> PrecisionRecall:
    """Per-class, macro, and support-weighted precision and recall.

    A class never predicted has undefined precision; a class with no true
    samples has undefined recall. Both are excluded from the averages.
    """
    if cm.sum() == 0:
        raise UndefinedMetricError("precision/recall undefined on an empty confusion matrix")
    n = cm.shape[0]
    precision: list[float | None] = []
    supports = [int(cm[c].sum()) for c in range(n)]
    for c in range(n):
        predicted = int(cm[:, c].sum())
        precision.append(None if predicted == 0 else 100.0 * float(cm[c, c]) / predicted)
    recall = per_class_recall(cm)
    macro_p, weighted_p = _aggregate(precision, supports)
    macro_r, weighted_r = _aggregate(recall, supports)
    return PrecisionRecall(precision, recall, macro_p, macro_r, weighted_p, weighted_r)


def sensitivity_specificity(cm: np.ndarray, positive_class: int = 1) -> tuple[float | None, float | None]:
    """Binary recall of the positive and negative classes, as percentages."""
    if cm.shape != (2, 2):
        raise DimensionError(f"sensitivity/specificity need a 2x2 matrix, got {cm.shape}")
    if positive_class not in (0, 1):
        raise ContractError(f"positive class must be 0 or 1, got {positive_class}")
    recalls = per_class_recall(cm)
    return recalls[positive_class], recalls[1 - positive_class]


def _average_ranks(scores: np.ndarray) -> np.ndarray:
    """1-based ranks with ties assigned the mean rank of their group."""
    order = np.argsort(scores, kind="stable")
    sorted_scores = scores[order]
    new_group = np.r_[True, sorted_scores[1:] != sorted_scores[:-1]]
    group_ids = np.cumsum(new_group) - 1
    base = np.arange(1, len(scores) + 1, dtype=np.float64)
    group_mean = np.bincount(group_ids, weights=base) / np.bincount(group_ids)
    ranks = np.empty(len(scores), dtype=np.float64)
    ranks[order] = group_mean[group_ids]
    return ranks


def _binary_auc(scores: np.ndarray, positive: np.ndarray) -> float:
    """Rank-sum AUC: P(score_pos > score_neg) + 0.5 * P(tie), in [0, 1]."""
    n_pos = int(positive.sum())
    n_neg = len(positive) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError(
            f"AUC undefined with {n_pos} positives and {n_neg} negatives"
        )
    ranks = _average_ranks(scores)
    return (ranks[positive].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)


def one_vs_rest_aucs(scores: np.ndarray, true_labels: np.ndarray) -> list[float | None]:
    """Per-class one-vs-rest AUC (None where a side is missing), in [0, 1]."""
    labels = np.asarray(true_labels, dtype=np.int64)
    out: list[float | None] = []
    for c in range(scores.shape[1]):
        positive = labels == c
        try:
            out.append(_binary_auc(scores[:, c], positive))
        except UndefinedMetricError:
            out.append(None)
    return out


def roc_auc(scores, true_labels, mode: str = "auto", positive_class: int = 1) -> float:
    """Area under the ROC curve, as a percentage.

    `scores` holds per-sample per-class probabilities (rows must sum to 1
    within 1e-4). Binary mode ranks the positive-class probability; the
    multiclass mode averages one-vs-rest AUCs over classes that have both
    positives and negatives, skipping (and thereby flagging) the rest.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(true_labels, dtype=np.int64)
    if scores.ndim != 2 or len(scores) != len(labels):
        raise DimensionError(
            f"scores must be n x C aligned with labels, got {scores.shape} and {labels.shape}"
        )
    sums = scores.sum(axis=1)
    if len(scores) and np.max(np.abs(sums - 1.0)) > 1e-4:
        raise ContractError("probability rows must sum to 1 within 1e-4")
    if mode == "auto":
        mode = "binary" if scores.shape[1] == 2 else "ovr_macro"
    if mode == "binary":
        if scores.shape[1] != 2:
            raise DimensionError(f"binary AUC needs 2 columns, got {scores.shape[1]}")
        return 100.0 * _binary_auc(scores[:, positive_class], labels == positive_class)
    if mode == "ovr_macro":
        aucs = [a for a in one_vs_rest_aucs(scores, labels) if a is not None]
        if not aucs:
            raise UndefinedMetricError("AUC undefined: no class has both positives and negatives")
        return 100.0 * float(np.mean(aucs))
    raise ContractError(f"unknown AUC mode {mode!r}")


@dataclass
class MetricsReport:
    """Every reported metric plus the confusion matrix it derives from."""

    accuracy: float
    balanced_accuracy: float
    auc: float | None
    sensitivity: float | None
    specificity: float | None
    precision_recall: PrecisionRecall
    confusion: np.ndarray

    def to_dict(self) -> dict:
        """JSON form with fixed keys; percentages rounded to 2 decimals."""
        r2 = lambda v: None if v is None else round(v, 2)
        pr = self.precision_recall
        return {
            "accuracy": r2(self.accuracy),
            "balanced_accuracy": r2(self.balanced_accuracy),
            "auc": r2(self.auc),
            "sensitivity": r2(self.sensitivity),
            "specificity": r2(self.specificity),
            "precision": {
                "per_class": [r2(v) for v in pr.precision],
                "macro": r2(pr.macro_precision),
                "weighted": r2(pr.weighted_precision),
            },
            "recall": {
                "per_class": [r2(v) for v in pr.recall],
                "macro": r2(pr.macro_recall),
                "weighted": r2(pr.weighted_recall),
            },
            "confusion": self.confusion.tolist(),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


def compute_report(true_labels, pred_labels, scores, num_classes: int,
                   positive_class: int = 1) -> MetricsReport:
    """Build the full report from pooled predictions and probabilities."""
    cm = confusion(true_labels, pred_labels, num_classes)
    sens = spec = None
    if num_classes == 2:
        sens, spec = sensitivity_specificity(cm, positive_class)
    try:
        auc = roc_auc(scores, true_labels, positive_class=positive_class)
    except UndefinedMetricError:
        auc = None
    return MetricsReport(
        accuracy=accuracy(cm),
        balanced_accuracy=balanced_accuracy(cm),
        auc=auc,
        sensitivity=sens,
        specificity=spec,
        precision_recall=precision_recall(cm),
        confusion=cm,
    )
