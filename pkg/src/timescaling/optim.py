"""SGD and Adam with decoupled weight decay, learning-rate schedules, dynamic time."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

SCHEDULES = ("constant", "warmup_cosine")
OPTIMIZERS = ("sgd", "adam")


@dataclass(frozen=True)
class ScheduleSpec:
    kind: str = "constant"
    total_steps: int = 1
    warmup_frac: float = 0.01
    floor_frac: float = 0.1

    def __post_init__(self):
        if self.kind not in SCHEDULES:
            raise ValueError(f"unknown schedule {self.kind!r}; expected one of {SCHEDULES}")
        if self.total_steps < 1:
            raise ValueError("total_steps must be >= 1")
        if not 0 <= self.warmup_frac < 1:
            raise ValueError("warmup_frac must lie in [0, 1)")
        if not 0 < self.floor_frac <= 1:
            raise ValueError("floor_frac must lie in (0, 1]")

    @property
    def warmup_steps(self) -> int:
        return math.ceil(self.warmup_frac * self.total_steps)


def lr_at(schedule: ScheduleSpec, t: int, lr_max: float) -> float:
    """Learning rate used by the update at step index ``t``.

    ``warmup_cosine`` rises linearly from 0 at ``t=0`` to ``lr_max`` at
    ``t = ceil(warmup_frac*T)``, then follows a half cosine down to
    ``floor_frac*lr_max`` at ``t = T``.
    """
    T = schedule.total_steps
    if t < 0 or t > T:
        raise ValueError(f"step {t} outside [0, {T}]")
    if schedule.kind == "constant":
        return float(lr_max)
    warm = schedule.warmup_steps
    if t < warm:
        return lr_max * t / warm
    floor = schedule.floor_frac * lr_max
    if T == warm:
        return float(lr_max)
    progress = (t - warm) / (T - warm)
    return floor + (lr_max - floor) * 0.5 * (1.0 + math.cos(math.pi * progress))


def lr_table(schedule: ScheduleSpec, lr_max: float) -> np.ndarray:
    """``lr_at`` for every t in 0..T as an array."""
    return np.array([lr_at(schedule, t, lr_max) for t in range(schedule.total_steps + 1)])


def dynamic_time_table(schedule: ScheduleSpec, lr_max: float) -> np.ndarray:
    """tau(t) for t in 0..T, where tau(t) is the sum of the learning rates of steps 0..t-1."""
    T = schedule.total_steps
    if schedule.kind == "constant":
        return float(lr_max) * np.arange(T + 1, dtype=np.float64)
    out = np.zeros(T + 1)
    np.cumsum(lr_table(schedule, lr_max)[:-1], out=out[1:])
    return out


def dynamic_time(schedule: ScheduleSpec, t: int, lr_max: float) -> float:
    """tau after ``t`` steps; exactly ``lr_max * t`` for a constant schedule."""
    if t < 0 or t > schedule.total_steps:
        raise ValueError(f"step {t} outside [0, {schedule.total_steps}]")
    if schedule.kind == "constant":
        return float(lr_max) * t
    return float(dynamic_time_table(schedule, lr_max)[t])


@dataclass(frozen=True)
class OptimConfig:
    kind: str = "sgd"
    lr_max: float = 0.1
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0
    schedule: ScheduleSpec = field(default_factory=ScheduleSpec)

    def __post_init__(self):
        if self.kind not in OPTIMIZERS:
            raise ValueError(f"unknown optimizer {self.kind!r}; expected one of {OPTIMIZERS}")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError("beta1 and beta2 must lie in [0, 1)")
        if self.eps <= 0:
            raise ValueError("eps must be > 0")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be >= 0")

    def lr(self, t: int) -> float:
        return lr_at(self.schedule, t, self.lr_max)


@dataclass
class OptimState:
    first_moment: np.ndarray
    second_moment: np.ndarray
    step_count: int = 0
    tau: float = 0.0

    @classmethod
    def zeros_like(cls, w: np.ndarray) -> "OptimState":
        return cls(np.zeros_like(w), np.zeros_like(w))


def sgd_step(w: np.ndarray, grad: np.ndarray, lr: float, weight_decay: float = 0.0) -> np.ndarray:
    if w.shape != grad.shape:
        raise ValueError(f"shape mismatch: w {w.shape} vs grad {grad.shape}")
    if weight_decay:
        return (1.0 - lr * weight_decay) * w - lr * grad
    return w - lr * grad


def adam_step(state: OptimState, w: np.ndarray, grad: np.ndarray, lr: float,
              config: OptimConfig) -> tuple[OptimState, np.ndarray]:
    """Bias-corrected Adam; decay multiplies ``w`` by ``1 - lr*wd`` before the Adam delta.

    ``state`` is updated in place and also returned.
    """
    if state.first_moment.shape != w.shape or grad.shape != w.shape:
        raise ValueError("optimizer state, weights and gradient must share a shape")
    b1, b2 = config.beta1, config.beta2
    state.step_count += 1
    t = state.step_count
    state.first_moment = b1 * state.first_moment + (1.0 - b1) * grad
    state.second_moment = b2 * state.second_moment + (1.0 - b2) * grad * grad
    m_hat = state.first_moment / (1.0 - b1 ** t)
    v_hat = state.second_moment / (1.0 - b2 ** t)
    if config.weight_decay:
        w = w * (1.0 - lr * config.weight_decay)
    w = w - lr * m_hat / (np.sqrt(v_hat) + config.eps)
    state.tau += lr
    return state, w


def optimizer_step(state: OptimState, w: np.ndarray, grad: np.ndarray, lr: float,
                   config: OptimConfig) -> tuple[OptimState, np.ndarray]:
    if config.kind == "adam":
        return adam_step(state, w, grad, lr, config)
    w = sgd_step(w, grad, lr, config.weight_decay)
    state.step_count += 1
    state.tau += lr
    return state, w
