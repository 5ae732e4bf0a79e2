"""Adam on flat parameter vectors, with linear / half-cosine LR schedules."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

LINEAR = "linear"
COSINE = "cosine"


@dataclass(frozen=True)
class ScheduleSpec:
    kind: str = LINEAR
    start: float = 1e-4
    end: float = 2.5e-6

    def __post_init__(self):
        if self.kind not in (LINEAR, COSINE):
            raise ValueError(f"unknown schedule kind {self.kind!r}")


def lr_at(schedule: ScheduleSpec, step: int, total_steps: int) -> float:
    """Interpolated learning rate; step 0 -> start, step total -> end."""
    if total_steps <= 0:
        return schedule.start
    t = min(max(step / total_steps, 0.0), 1.0)
    if schedule.kind == LINEAR:
        return schedule.start + (schedule.end - schedule.start) * t
    return schedule.end + (schedule.start - schedule.end) * 0.5 * (1.0 + math.cos(math.pi * t))


@dataclass(frozen=True)
class OptimizerState:
    """Adam moments plus the schedule that maps step_count to a rate."""

    first_moment: np.ndarray
    second_moment: np.ndarray
    step_count: int
    schedule: ScheduleSpec
    total_steps: int
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @property
    def base_lr(self) -> float:
        return self.schedule.start

    def current_lr(self) -> float:
        return lr_at(self.schedule, self.step_count, self.total_steps)


def init_optimizer(dim: int, schedule: ScheduleSpec, total_steps: int) -> OptimizerState:
    return OptimizerState(
        first_moment=np.zeros(dim),
        second_moment=np.zeros(dim),
        step_count=0,
        schedule=schedule,
        total_steps=total_steps,
    )


def adam_step(state: OptimizerState, params: np.ndarray, grads: np.ndarray):
    """One bias-corrected Adam update; returns (new_params, new_state).

    Pure: inputs are never mutated.  The learning rate is read from the
    schedule at the pre-update step count.
    """
    if params.shape != grads.shape or params.shape != state.first_moment.shape:
        raise ValueError("parameter/gradient/moment shapes disagree")
    lr = state.current_lr()
    t = state.step_count + 1
    m = state.beta1 * state.first_moment + (1.0 - state.beta1) * grads
    v = state.beta2 * state.second_moment + (1.0 - state.beta2) * grads**2
    m_hat = m / (1.0 - state.beta1**t)
    v_hat = v / (1.0 - state.beta2**t)
    new_params = params - lr * m_hat / (np.sqrt(v_hat) + state.eps)
    assert np.all(np.isfinite(new_params)), "optimizer produced non-finite parameters"
    return new_params, replace(state, first_moment=m, second_moment=v, step_count=t)
