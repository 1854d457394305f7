"""Classification and calibration metrics.

All metrics operate on positive-class probability scores and binary
labels. AUROC uses the Mann-Whitney formulation with half credit for
ties; AUPRC is the step-wise average-precision sum over descending
unique thresholds, with tied scores grouped at one threshold. ECE uses
equal-width bins over [0, 1]. Multi-class helpers (accuracy and macro
precision/recall/F1) cover tasks with more than two classes.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class MetricUndefinedError(ValueError):
    """The metric is undefined for the given label distribution."""


class MetricConfigError(ValueError):
    """Invalid metric configuration."""


@dataclass
class MetricsReport:
    auroc: float
    auprc: float
    ece: float
    brier: float
    mean_pos_prob: float
    n_pos: int
    n_neg: int
    extras: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        out = {
            "auroc": self.auroc,
            "auprc": self.auprc,
            "ece": self.ece,
            "brier": self.brier,
            "mean_pos_prob": self.mean_pos_prob,
            "n_pos": self.n_pos,
            "n_neg": self.n_neg,
        }
        out.update(self.extras)
        return out


def _validate(scores, labels) -> tuple[np.ndarray, np.ndarray]:
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if scores.shape != labels.shape or scores.ndim != 1:
        raise MetricConfigError(f"scores {scores.shape} and labels {labels.shape} "
                                "must be matching 1-d arrays")
    if not np.all(np.isfinite(scores)):
        raise MetricConfigError("scores must be finite")
    return scores, labels


def auroc(scores, labels) -> float:
    """Probability a random positive outranks a random negative (ties half)."""
    scores, labels = _validate(scores, labels)
    n_pos = int((labels == 1).sum())
    n_neg = int((labels == 0).sum())
    if n_pos == 0 or n_neg == 0:
        raise MetricUndefinedError(f"AUROC needs both classes, got {n_pos} positive "
                                   f"and {n_neg} negative")
    order = np.argsort(scores, kind="mergesort")
    ranks = np.empty(len(scores), dtype=np.float64)
    sorted_scores = scores[order]
    i = 0
    while i < len(sorted_scores):
        j = i
        while j + 1 < len(sorted_scores) and sorted_scores[j + 1] == sorted_scores[i]:
            j += 1
        ranks[order[i:j + 1]] = 0.5 * (i + j) + 1.0  # midrank, 1-based
        i = j + 1
    rank_sum = ranks[labels == 1].sum()
    return float((rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def auprc(scores, labels) -> float:
    """Average precision: sum of (recall step) * precision at each threshold."""
    scores, labels = _validate(scores, labels)
    n_pos = int((labels == 1).sum())
    if n_pos == 0:
        raise MetricUndefinedError("AUPRC needs at least one positive sample")
    order = np.argsort(-scores, kind="mergesort")
    sorted_scores = scores[order]
    sorted_labels = labels[order]
    ap = 0.0
    tp = 0
    fp = 0
    prev_recall = 0.0
    i = 0
    n = len(sorted_scores)
    while i < n:
        j = i
        while j + 1 < n and sorted_scores[j + 1] == sorted_scores[i]:
            j += 1
        tp += int((sorted_labels[i:j + 1] == 1).sum())
        fp += (j - i + 1) - int((sorted_labels[i:j + 1] == 1).sum())
        precision = tp / (tp + fp)
        recall = tp / n_pos
        ap += (recall - prev_recall) * precision
        prev_recall = recall
        i = j + 1
    return float(ap)


def ece(scores, labels, bins: int = 10) -> float:
    """Expected calibration error over equal-width bins on [0, 1]."""
    if bins < 1:
        raise MetricConfigError(f"ece needs bins >= 1, got {bins}")
    scores, labels = _validate(scores, labels)
    if np.any(scores < 0.0) or np.any(scores > 1.0):
        raise MetricConfigError("ece scores must lie in [0, 1]")
    n = len(scores)
    if n == 0:
        return 0.0
    idx = np.minimum((scores * bins).astype(np.int64), bins - 1)
    total = 0.0
    for b in range(bins):
        members = idx == b
        n_b = int(members.sum())
        if n_b == 0:
            continue
        acc = labels[members].mean()
        conf = scores[members].mean()
        total += (n_b / n) * abs(acc - conf)
    return float(total)


def brier(scores, labels) -> float:
    """Mean squared error between probability and binary label."""
    scores, labels = _validate(scores, labels)
    if len(scores) == 0:
        return 0.0
    return float(np.mean((scores - labels) ** 2))


def mean_pos_prob(scores, labels) -> float:
    """Mean predicted probability over positive-class samples."""
    scores, labels = _validate(scores, labels)
    pos = scores[labels == 1]
    if len(pos) == 0:
        raise MetricUndefinedError("mean_pos_prob needs at least one positive sample")
    return float(pos.mean())


def binary_report(scores, labels, bins: int = 10) -> MetricsReport:
    scores, labels = _validate(scores, labels)
    return MetricsReport(
        auroc=auroc(scores, labels),
        auprc=auprc(scores, labels),
        ece=ece(scores, labels, bins=bins),
        brier=brier(scores, labels),
        mean_pos_prob=mean_pos_prob(scores, labels),
        n_pos=int((labels == 1).sum()),
        n_neg=int((labels == 0).sum()),
    )


def multiclass_report(probs, labels) -> dict:
    """Accuracy plus macro precision/recall/F1 for C > 2 tasks."""
    probs = np.asarray(probs, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    pred = probs.argmax(axis=1)
    n_classes = probs.shape[1]
    precisions, recalls, f1s = [], [], []
    for c in range(n_classes):
        tp = int(((pred == c) & (labels == c)).sum())
        fp = int(((pred == c) & (labels != c)).sum())
        fn = int(((pred != c) & (labels == c)).sum())
        p = tp / (tp + fp) if tp + fp > 0 else 0.0
        r = tp / (tp + fn) if tp + fn > 0 else 0.0
        f = 2 * p * r / (p + r) if p + r > 0 else 0.0
        precisions.append(p)
        recalls.append(r)
        f1s.append(f)
    return {
        "accuracy": float((pred == labels).mean()),
        "precision_macro": float(np.mean(precisions)),
        "recall_macro": float(np.mean(recalls)),
        "f1_macro": float(np.mean(f1s)),
    }
