"""Validation-driven feedback state for the adaptive loss.

The training loop reports (accuracy, recall) once per epoch; every `period`
epochs the state folds the buffered values into its running (a, r) pair by
plain arithmetic mean (deliberately no exponential smoothing). The adjustment
factor derived from (a, r) scales the true-positive log term of the adaptive
loss, so falling recall raises the penalty on missed positives.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .losses import RfaHyperparams


@dataclass(frozen=True)
class FeedbackConfig:
    period: int = 5
    r_floor: float = 0.05
    a_ceiling: float = 0.999
    masked: bool = False  # True freezes (a, r) at their initial values

    def __post_init__(self):
        if self.period < 1:
            raise ValueError("period must be >= 1")
        if not 0.0 < self.r_floor <= 1.0:
            raise ValueError("r_floor must lie in (0, 1]")
        if not 0.0 < self.a_ceiling < 1.0:
            raise ValueError("a_ceiling must lie in (0, 1)")


@dataclass
class FeedbackState:
    """Running validation accuracy / positive-class recall plus the update buffer."""

    a: float = 0.5
    r: float = 0.5
    period: int = 5
    buffer: list = field(default_factory=list)

    def __post_init__(self):
        if not (0.0 <= self.a <= 1.0 and 0.0 <= self.r <= 1.0):
            raise ValueError("a and r must lie in [0, 1]")
        if self.period < 1:
            raise ValueError("period must be >= 1")


def record_epoch(state: FeedbackState, acc: float, recall: float) -> FeedbackState:
    """Buffer one epoch's metrics; fold the buffer into (a, r) every `period` epochs."""
    if not (0.0 <= acc <= 1.0 and 0.0 <= recall <= 1.0):
        raise ValueError("metrics must lie in [0, 1]")
    state.buffer.append((float(acc), float(recall)))
    if len(state.buffer) >= state.period:
        state.a = sum(p[0] for p in state.buffer) / len(state.buffer)
        state.r = sum(p[1] for p in state.buffer) / len(state.buffer)
        state.buffer.clear()
    return state


def adjustment_factor(
    state: FeedbackState,
    hp: RfaHyperparams,
    r_floor: float = 0.05,
    a_ceiling: float = 0.999,
) -> float:
    """M * (1 - a^n1) / r^n2 with a capped at a_ceiling and r floored at r_floor."""
    a = min(state.a, a_ceiling)
    r = max(state.r, r_floor)
    return hp.m * (1.0 - a ** hp.n1) / r ** hp.n2


class FeedbackController:
    """Owns the feedback state for one training run.

    `observe` is called once per epoch with validation metrics; `adjustment`
    and `loss_accuracy` supply the (A, a) pair the adaptive loss needs. A
    masked controller never updates its state, so both stay at their initial
    values for the whole run.
    """

    def __init__(self, cfg: FeedbackConfig, hp: RfaHyperparams):
        self.cfg = cfg
        self.hp = hp
        self.state = FeedbackState(period=cfg.period)

    def observe(self, acc: float, recall: float):
        if self.cfg.masked:
            return
        record_epoch(self.state, acc, recall)

    def adjustment(self) -> float:
        return adjustment_factor(self.state, self.hp, self.cfg.r_floor, self.cfg.a_ceiling)

    @property
    def loss_accuracy(self) -> float:
        return min(self.state.a, self.cfg.a_ceiling)
