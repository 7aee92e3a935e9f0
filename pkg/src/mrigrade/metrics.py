"""Classification metrics: confusion counts, ARS, F-beta, AUC, curve smoothing.

All binary metrics treat class 1 as the positive class. Degenerate 0/0
ratios resolve to 0 so minority-class reporting stays conservative.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class BinaryPredictionSet:
    """Scores, hard predictions and ground truth for one evaluation split."""

    scores: np.ndarray  # P(class 1) per sample, in [0, 1]
    preds: np.ndarray   # predicted labels in {0, 1}
    labels: np.ndarray  # true labels in {0, 1}

    def __post_init__(self):
        scores = np.asarray(self.scores, dtype=float)
        preds = np.asarray(self.preds, dtype=int)
        labels = np.asarray(self.labels, dtype=int)
        if not (scores.shape == preds.shape == labels.shape) or scores.ndim != 1:
            raise ValueError("scores, preds and labels must be 1-D arrays of equal length")
        if scores.size == 0:
            raise ValueError("empty prediction set")
        for arr, name in ((preds, "preds"), (labels, "labels")):
            if not np.isin(arr, (0, 1)).all():
                raise ValueError(f"{name} must be binary (0/1)")
        object.__setattr__(self, "scores", scores)
        object.__setattr__(self, "preds", preds)
        object.__setattr__(self, "labels", labels)


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fp: int
    fn: int
    tn: int

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn

    @property
    def accuracy(self) -> float:
        return (self.tp + self.tn) / self.total if self.total else 0.0

    @property
    def precision(self) -> float:
        denom = self.tp + self.fp
        return self.tp / denom if denom else 0.0

    @property
    def recall(self) -> float:
        denom = self.tp + self.fn
        return self.tp / denom if denom else 0.0

    def as_matrix(self) -> np.ndarray:
        """Rows true class (0, 1), columns predicted class (0, 1)."""
        return np.array([[self.tn, self.fp], [self.fn, self.tp]], dtype=int)


def confusion(preds: BinaryPredictionSet) -> ConfusionCounts:
    y, p = preds.labels, preds.preds
    return ConfusionCounts(
        tp=int(np.sum((y == 1) & (p == 1))),
        fp=int(np.sum((y == 0) & (p == 1))),
        fn=int(np.sum((y == 1) & (p == 0))),
        tn=int(np.sum((y == 0) & (p == 0))),
    )


def ars(recall: float, accuracy: float) -> float:
    """Geometric mean of recall and accuracy."""
    if not (0.0 <= recall <= 1.0 and 0.0 <= accuracy <= 1.0):
        raise ValueError("recall and accuracy must lie in [0, 1]")
    return math.sqrt(recall * accuracy)


def f_beta(precision: float, recall: float, beta: float = 2.0) -> float:
    """F-measure weighting recall beta times as heavily as precision."""
    if not (0.0 <= precision <= 1.0 and 0.0 <= recall <= 1.0):
        raise ValueError("precision and recall must lie in [0, 1]")
    denom = beta * beta * precision + recall
    if denom == 0.0:
        return 0.0
    return (1.0 + beta * beta) * precision * recall / denom


def auc(preds: BinaryPredictionSet) -> float:
    """Area under the ROC curve via pairwise score comparison.

    Counts the fraction of (positive, negative) pairs ranked correctly,
    ties contributing 0.5; identical to trapezoidal ROC area.
    """
    pos = preds.scores[preds.labels == 1]
    neg = preds.scores[preds.labels == 0]
    if pos.size == 0 or neg.size == 0:
        raise ValueError("auc requires at least one positive and one negative sample")
    diff = pos[:, None] - neg[None, :]
    wins = np.count_nonzero(diff > 0)
    ties = np.count_nonzero(diff == 0)
    return (wins + 0.5 * ties) / (pos.size * neg.size)


def gaussian_smooth(series: np.ndarray, sigma: float) -> np.ndarray:
    """Smooth a 1-D series with a normalized Gaussian kernel, reflect padding."""
    if sigma < 0:
        raise ValueError("sigma must be >= 0")
    series = np.asarray(series, dtype=float)
    if series.ndim != 1:
        raise ValueError("series must be 1-D")
    if sigma == 0 or series.size <= 1:
        return series.copy()
    radius = max(1, int(math.ceil(4.0 * sigma)))
    x = np.arange(-radius, radius + 1, dtype=float)
    kernel = np.exp(-0.5 * (x / sigma) ** 2)
    kernel /= kernel.sum()
    # Reflect padding needs pad width < length; widen by tiling the reflection.
    pad = radius
    padded = series
    while pad > 0:
        step = min(pad, padded.size - 1)
        padded = np.pad(padded, step, mode="reflect")
        pad -= step
    return np.convolve(padded, kernel, mode="valid")


@dataclass(frozen=True)
class MetricBundle:
    """Everything the evaluation protocol reports for one binary split."""

    accuracy: float
    precision: float
    recall: float
    ars: float
    f2: float
    auc: float | None
    confusion: ConfusionCounts

    def as_dict(self) -> dict:
        d = {
            "accuracy": self.accuracy,
            "precision": self.precision,
            "recall": self.recall,
            "ars": self.ars,
            "f2": self.f2,
            "auc": self.auc,
        }
        d.update(
            {"tp": self.confusion.tp, "fp": self.confusion.fp,
             "fn": self.confusion.fn, "tn": self.confusion.tn}
        )
        return d


def bundle_metrics(preds: BinaryPredictionSet) -> MetricBundle:
    """Compute the full metric bundle; AUC is None for single-class splits."""
    counts = confusion(preds)
    try:
        auc_value = auc(preds)
    except ValueError:
        auc_value = None
    return MetricBundle(
        accuracy=counts.accuracy,
        precision=counts.precision,
        recall=counts.recall,
        ars=ars(counts.recall, counts.accuracy),
        f2=f_beta(counts.precision, counts.recall, beta=2.0),
        auc=auc_value,
        confusion=counts,
    )
