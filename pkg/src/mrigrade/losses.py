"""Binary classification losses with analytic gradients.

Every loss reports its value together with the gradient of the batch-mean
value with respect to the softmax probabilities, so the training loop can
chain through the softmax without autodiff. Probabilities are clamped to
[EPS_P, 1-EPS_P] before any logarithm; the reported gradient is the gradient
of the clamped expression (zero where the clamp is active).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

EPS_P = 1e-7

LOSS_KINDS = ("rfa", "ce", "focal", "recall", "base")


@dataclass(frozen=True)
class RfaHyperparams:
    """Feedback-intensity knobs for the adaptive adjustment factor."""

    m: float = 0.3
    n1: float = 1.0
    n2: float = 3.0

    def __post_init__(self):
        if self.m <= 0 or self.n1 <= 0 or self.n2 <= 0:
            raise ValueError("m, n1 and n2 must all be positive")


@dataclass(frozen=True)
class ProbPair:
    """Two-class softmax output."""

    p0: float
    p1: float

    def __post_init__(self):
        if not (0.0 <= self.p0 <= 1.0 and 0.0 <= self.p1 <= 1.0):
            raise ValueError("probabilities must lie in [0, 1]")
        if abs(self.p0 + self.p1 - 1.0) > 1e-9:
            raise ValueError("probabilities must sum to 1")

    @classmethod
    def from_p1(cls, p1: float) -> "ProbPair":
        return cls(1.0 - p1, p1)

    def as_array(self) -> np.ndarray:
        return np.array([[self.p0, self.p1]], dtype=np.float64)


@dataclass
class RecallLossState:
    """Per-class recalls feeding the recall-weighted cross entropy."""

    recalls: np.ndarray

    def __post_init__(self):
        r = np.asarray(self.recalls, dtype=np.float64)
        if r.ndim != 1 or r.size < 2:
            raise ValueError("recalls must be a 1-D array with one entry per class")
        if np.any(r < 0) or np.any(r > 1):
            raise ValueError("recalls must lie in [0, 1]")
        self.recalls = r


def _clamp_probs(p: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Clamped probabilities and the clamp derivative (1 inside, 0 outside)."""
    p = np.asarray(p, dtype=np.float64)
    c = np.clip(p, EPS_P, 1.0 - EPS_P)
    d = ((p >= EPS_P) & (p <= 1.0 - EPS_P)).astype(np.float64)
    return c, d


def _check_binary_batch(probs: np.ndarray, labels: np.ndarray, n_classes: int = 2):
    probs = np.asarray(probs, dtype=np.float64)
    labels = np.asarray(labels)
    if probs.ndim != 2 or probs.shape[1] != n_classes:
        raise ValueError(f"probs must have shape (n, {n_classes})")
    if labels.shape != (probs.shape[0],):
        raise ValueError("labels must be 1-D with one entry per row of probs")
    if probs.shape[0] == 0:
        raise ValueError("empty batch")
    labels = labels.astype(np.int64)
    if labels.min() < 0 or labels.max() >= n_classes:
        raise ValueError("labels out of range")
    return probs, labels


class BatchLoss:
    """Common interface: mean loss over a batch plus its probability gradient."""

    name = "loss"
    n_classes = 2

    def batch(self, probs: np.ndarray, labels: np.ndarray) -> tuple[float, np.ndarray]:
        raise NotImplementedError


class CrossEntropyLoss(BatchLoss):
    """Plain negative log likelihood of the true class; any class count."""

    name = "ce"

    def __init__(self, n_classes: int = 2):
        if n_classes < 2:
            raise ValueError("need at least two classes")
        self.n_classes = n_classes

    def batch(self, probs, labels):
        probs, labels = _check_binary_batch(probs, labels, self.n_classes)
        c, d = _clamp_probs(probs)
        n = probs.shape[0]
        idx = np.arange(n)
        p_true = c[idx, labels]
        value = float(np.mean(-np.log(p_true)))
        grad = np.zeros_like(c)
        grad[idx, labels] = -d[idx, labels] / (p_true * n)
        return value, grad


class BaseLoss(BatchLoss):
    """Wrong-class probability plus negative log of the true-class probability."""

    name = "base"

    def batch(self, probs, labels):
        probs, labels = _check_binary_batch(probs, labels)
        c, d = _clamp_probs(probs)
        n = probs.shape[0]
        idx = np.arange(n)
        wrong = 1 - labels
        p_true = c[idx, labels]
        value = float(np.mean(c[idx, wrong] - np.log(p_true)))
        grad = np.zeros_like(c)
        grad[idx, wrong] = d[idx, wrong] / n
        grad[idx, labels] = -d[idx, labels] / (p_true * n)
        return value, grad


class RfaLoss(BatchLoss):
    """Recall-feedback adaptive loss.

    True class 1: -A*log(p1) + (1-a)*p0. True class 0: A*p1 - (1-a)*log(p0).
    The adjustment factor A and validation accuracy a are pushed in by the
    training loop each time the feedback state updates; the defaults (A=1,
    a=0) make the loss identical to BaseLoss.
    """

    name = "rfa"

    def __init__(self, adjustment: float = 1.0, accuracy: float = 0.0):
        self.set_feedback(adjustment, accuracy)

    def set_feedback(self, adjustment: float, accuracy: float):
        if adjustment < 0:
            raise ValueError("adjustment factor must be non-negative")
        if not 0.0 <= accuracy < 1.0:
            raise ValueError("accuracy must lie in [0, 1)")
        self.adjustment = float(adjustment)
        self.accuracy = float(accuracy)

    def batch(self, probs, labels):
        probs, labels = _check_binary_batch(probs, labels)
        c, d = _clamp_probs(probs)
        n = probs.shape[0]
        a_coef = self.adjustment
        m_coef = 1.0 - self.accuracy
        pos = labels == 1
        p0, p1 = c[:, 0], c[:, 1]
        values = np.where(pos, -a_coef * np.log(p1) + m_coef * p0,
                          a_coef * p1 - m_coef * np.log(p0))
        grad = np.empty_like(c)
        grad[:, 0] = np.where(pos, m_coef * d[:, 0], -m_coef * d[:, 0] / p0)
        grad[:, 1] = np.where(pos, -a_coef * d[:, 1] / p1, a_coef * d[:, 1])
        return float(np.mean(values)), grad / n


class FocalLoss(BatchLoss):
    """Cross entropy scaled down on easy samples: -alpha_t*(1-p_t)^gamma*log(p_t)."""

    name = "focal"

    def __init__(self, gamma: float = 2.0, alpha: float = 0.25):
        if gamma < 0:
            raise ValueError("gamma must be non-negative")
        if not 0.0 <= alpha <= 1.0:
            raise ValueError("alpha must lie in [0, 1]")
        self.gamma = float(gamma)
        self.alpha = float(alpha)

    def batch(self, probs, labels):
        probs, labels = _check_binary_batch(probs, labels)
        c, d = _clamp_probs(probs)
        n = probs.shape[0]
        idx = np.arange(n)
        p_t = c[idx, labels]
        d_t = d[idx, labels]
        alpha_t = np.where(labels == 1, self.alpha, 1.0 - self.alpha)
        miss = 1.0 - p_t
        value = float(np.mean(-alpha_t * miss ** self.gamma * np.log(p_t)))
        if self.gamma == 0.0:
            d_dpt = -alpha_t / p_t
        else:
            d_dpt = (alpha_t * self.gamma * miss ** (self.gamma - 1.0) * np.log(p_t)
                     - alpha_t * miss ** self.gamma / p_t)
        grad = np.zeros_like(c)
        grad[idx, labels] = d_dpt * d_t / n
        return value, grad


class RecallWeightedCeLoss(BatchLoss):
    """Cross entropy with each class down-weighted by its current recall.

    Weights are (1 - recall of the true class); recalls start at zero (full
    weight) and are replaced by the training loop as fresh per-class recalls
    become available.
    """

    name = "recall"

    def __init__(self, n_classes: int = 2):
        if n_classes < 2:
            raise ValueError("need at least two classes")
        self.n_classes = n_classes
        self.state = RecallLossState(np.zeros(n_classes))

    def set_recalls(self, recalls: np.ndarray):
        state = RecallLossState(np.asarray(recalls, dtype=np.float64))
        if state.recalls.size != self.n_classes:
            raise ValueError("one recall per class required")
        self.state = state

    def batch(self, probs, labels):
        probs, labels = _check_binary_batch(probs, labels, self.n_classes)
        c, d = _clamp_probs(probs)
        n = probs.shape[0]
        idx = np.arange(n)
        weights = 1.0 - self.state.recalls[labels]
        p_true = c[idx, labels]
        value = float(np.mean(-weights * np.log(p_true)))
        grad = np.zeros_like(c)
        grad[idx, labels] = -weights * d[idx, labels] / (p_true * n)
        return value, grad


def base_loss(p: ProbPair, true_label: int) -> tuple[float, tuple[float, float]]:
    value, grad = BaseLoss().batch(p.as_array(), np.array([true_label]))
    return value, (float(grad[0, 0]), float(grad[0, 1]))


def rfa_loss(
    p: ProbPair, true_label: int, adjustment: float, accuracy: float
) -> tuple[float, tuple[float, float]]:
    value, grad = RfaLoss(adjustment, accuracy).batch(p.as_array(), np.array([true_label]))
    return value, (float(grad[0, 0]), float(grad[0, 1]))


def cross_entropy(p: ProbPair, true_label: int) -> tuple[float, tuple[float, float]]:
    value, grad = CrossEntropyLoss().batch(p.as_array(), np.array([true_label]))
    return value, (float(grad[0, 0]), float(grad[0, 1]))


def focal_loss(
    p: ProbPair, true_label: int, gamma: float = 2.0, alpha: float = 0.25
) -> tuple[float, tuple[float, float]]:
    value, grad = FocalLoss(gamma, alpha).batch(p.as_array(), np.array([true_label]))
    return value, (float(grad[0, 0]), float(grad[0, 1]))


def recall_ce(
    probs: np.ndarray, labels: np.ndarray, state: RecallLossState
) -> tuple[float, np.ndarray]:
    loss = RecallWeightedCeLoss(n_classes=state.recalls.size)
    loss.state = state
    return loss.batch(probs, labels)


@dataclass(frozen=True)
class LossConfig:
    """Selects and parameterizes the training loss."""

    kind: str = "rfa"
    m: float = 0.3
    n1: float = 1.0
    n2: float = 3.0
    gamma: float = 2.0
    alpha: float = 0.25

    def __post_init__(self):
        if self.kind not in LOSS_KINDS:
            raise ValueError(f"loss kind must be one of {LOSS_KINDS}")

    @property
    def rfa_hyperparams(self) -> RfaHyperparams:
        return RfaHyperparams(self.m, self.n1, self.n2)


def make_loss(cfg: LossConfig, n_classes: int = 2) -> BatchLoss:
    """Instantiate the loss named by the config."""
    if cfg.kind in ("rfa", "base", "focal") and n_classes != 2:
        raise ValueError(f"loss {cfg.kind!r} is defined for two classes only")
    if cfg.kind == "ce":
        return CrossEntropyLoss(n_classes)
    if cfg.kind == "base":
        return BaseLoss()
    if cfg.kind == "focal":
        return FocalLoss(cfg.gamma, cfg.alpha)
    if cfg.kind == "recall":
        return RecallWeightedCeLoss(n_classes)
    return RfaLoss()


def softmax(logits: np.ndarray) -> np.ndarray:
    """Row-wise stable softmax."""
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_backward(probs: np.ndarray, grad_probs: np.ndarray) -> np.ndarray:
    """Gradient w.r.t. logits given the gradient w.r.t. softmax outputs."""
    inner = np.sum(grad_probs * probs, axis=-1, keepdims=True)
    return probs * (grad_probs - inner)
