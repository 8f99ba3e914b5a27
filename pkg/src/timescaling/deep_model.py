"""Residual-MLP softmax model with hand-written reverse-mode gradients.

Forward pass for a batch ``x`` (rows are samples)::

    h_0 = rms(x)
    h_l = B_l relu(A_l rms(h_{l-1}) + b_l)^2 + h_{l-1}      l = 1..depth
    y   = W rms(h_depth)

``rms`` has no learnable gain.  Hidden width is ``4m``.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from .core_model import kl_from_logits, measure_beta, softmax
from .optim import OptimState, adam_step, dynamic_time_table, lr_table
from .seeding import derive_seed, make_rng, stream

PARAM_NAMES = ("A", "b", "B", "W")
CALIBRATION_BATCH = 10_000


def rmsnorm(v, eps: float = 1e-8) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    return v / np.sqrt(np.mean(v * v, axis=-1, keepdims=True) + eps)


def rmsnorm_backward(v: np.ndarray, g: np.ndarray, eps: float = 1e-8) -> np.ndarray:
    """Vector-Jacobian product of ``rmsnorm`` at ``v`` with upstream ``g``."""
    r = 1.0 / np.sqrt(np.mean(v * v, axis=-1, keepdims=True) + eps)
    gv = np.sum(g * v, axis=-1, keepdims=True)
    return r * g - v * (r ** 3) * gv / v.shape[-1]


def relu2(z: np.ndarray) -> np.ndarray:
    r = np.maximum(z, 0.0)
    return r * r


@dataclass
class DeepSpec:
    """Parameters stacked over layers: A (depth, 4m, m), b (depth, 4m), B (depth, m, 4m), W (n, m)."""

    m: int
    n: int
    depth: int
    A: np.ndarray = field(repr=False)
    b: np.ndarray = field(repr=False)
    B: np.ndarray = field(repr=False)
    W: np.ndarray = field(repr=False)
    rms_eps: float = 1e-8
    # bumped on every parameter update; caches carry the value they saw
    version: int = 0

    def __post_init__(self):
        h = 4 * self.m
        want = {"A": (self.depth, h, self.m), "b": (self.depth, h),
                "B": (self.depth, self.m, h), "W": (self.n, self.m)}
        for k, shape in want.items():
            if getattr(self, k).shape != shape:
                raise ValueError(f"{k} has shape {getattr(self, k).shape}, expected {shape}")

    @property
    def hidden(self) -> int:
        return 4 * self.m

    def params(self) -> dict[str, np.ndarray]:
        return {k: getattr(self, k) for k in PARAM_NAMES}

    def set_params(self, new: dict[str, np.ndarray]) -> None:
        for k, v in new.items():
            setattr(self, k, v)
        self.version += 1

    def copy(self) -> "DeepSpec":
        return DeepSpec(self.m, self.n, self.depth, self.A.copy(), self.b.copy(),
                        self.B.copy(), self.W.copy(), self.rms_eps)


def init_deep(m: int, n: int, depth: int, seed: int, rms_eps: float = 1e-8,
              gain: float = 1.0) -> DeepSpec:
    """Entries uniform in +-gain/sqrt(fan_in); biases zero."""
    if m < 1 or n < 1 or depth < 0:
        raise ValueError("need m, n >= 1 and depth >= 0")
    rng = make_rng(seed)
    h = 4 * m

    def u(shape, fan_in):
        bound = gain / math.sqrt(fan_in)
        return rng.uniform(-bound, bound, size=shape)

    A = u((depth, h, m), m)
    B = u((depth, m, h), h)
    W = u((n, m), m)
    return DeepSpec(m, n, depth, A, np.zeros((depth, h)), B, W, rms_eps)


def zero_mlp(m: int, n: int, depth: int, W: np.ndarray) -> DeepSpec:
    h = 4 * m
    return DeepSpec(m, n, depth, np.zeros((depth, h, m)), np.zeros((depth, h)),
                    np.zeros((depth, m, h)), np.asarray(W, dtype=np.float64))


@dataclass
class DeepCache:
    x: np.ndarray
    hs: list[np.ndarray]
    us: list[np.ndarray]
    zs: list[np.ndarray]
    u_head: np.ndarray
    logits: np.ndarray
    version: int
    shapes: tuple


def _shapes(spec: DeepSpec) -> tuple:
    return tuple(getattr(spec, k).shape for k in PARAM_NAMES)


def deep_forward(spec: DeepSpec, x) -> tuple[np.ndarray, DeepCache]:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != spec.m:
        raise ValueError(f"input shape {x.shape} incompatible with m={spec.m}")
    eps = spec.rms_eps
    h = rmsnorm(x, eps)
    hs, us, zs = [h], [], []
    for l in range(spec.depth):
        u = rmsnorm(h, eps)
        z = u @ spec.A[l].T + spec.b[l]
        h = h + relu2(z) @ spec.B[l].T
        us.append(u)
        zs.append(z)
        hs.append(h)
    u_head = rmsnorm(h, eps)
    logits = u_head @ spec.W.T
    return logits, DeepCache(x, hs, us, zs, u_head, logits, spec.version, _shapes(spec))


def deep_logits(spec: DeepSpec, x) -> np.ndarray:
    """Forward pass without keeping activations."""
    x = np.asarray(x, dtype=np.float64)
    eps = spec.rms_eps
    h = rmsnorm(x, eps)
    for l in range(spec.depth):
        h = h + relu2(rmsnorm(h, eps) @ spec.A[l].T + spec.b[l]) @ spec.B[l].T
    return rmsnorm(h, eps) @ spec.W.T


class StaleCache(ValueError):
    """The cache was produced by a different parameter version or shape."""


def deep_backward(spec: DeepSpec, cache: DeepCache, p) -> dict[str, np.ndarray]:
    """Gradients of the batch-mean ``KL(p || softmax(logits))`` for every parameter."""
    if cache.version != spec.version or cache.shapes != _shapes(spec):
        raise StaleCache(f"cache from version {cache.version}, spec is at {spec.version}")
    p = np.asarray(p, dtype=np.float64)
    if p.shape != cache.logits.shape:
        raise ValueError(f"teacher probs shape {p.shape} != logits shape {cache.logits.shape}")
    eps = spec.rms_eps
    g_y = (softmax(cache.logits) - p) / p.shape[0]
    dW = g_y.T @ cache.u_head
    g_h = rmsnorm_backward(cache.hs[-1], g_y @ spec.W, eps)
    dA = np.zeros_like(spec.A)
    db = np.zeros_like(spec.b)
    dB = np.zeros_like(spec.B)
    for l in reversed(range(spec.depth)):
        z = cache.zs[l]
        r = np.maximum(z, 0.0)
        dB[l] = g_h.T @ (r * r)
        g_z = (g_h @ spec.B[l]) * (2.0 * r)
        db[l] = g_z.sum(axis=0)
        dA[l] = g_z.T @ cache.us[l]
        g_h = g_h + rmsnorm_backward(cache.hs[l], g_z @ spec.A[l], eps)
    return {"A": dA, "b": db, "B": dB, "W": dW}


def deep_loss(spec: DeepSpec, x, p) -> float:
    logits = deep_logits(spec, x)
    logp = np.log(np.maximum(np.asarray(p, dtype=np.float64), 1e-300))
    q_log = logits - logits.max(axis=1, keepdims=True)
    q_log = q_log - np.log(np.exp(q_log).sum(axis=1, keepdims=True))
    return float(np.mean(np.sum(np.where(p > 0, p * (logp - q_log), 0.0), axis=1)))


@dataclass
class ScaledTeacher:
    """Deep teacher whose logits are multiplied by ``scale`` to hit a target std."""

    spec: DeepSpec
    scale: float

    def logits(self, x) -> np.ndarray:
        return self.scale * deep_logits(self.spec, x)


def calibrate_teacher(spec: DeepSpec, beta_star: float, seed: int,
                      batch: int = CALIBRATION_BATCH) -> ScaledTeacher:
    """Rescale so the measured teacher logit std on a calibration batch equals ``beta_star``."""
    if beta_star < 0:
        raise ValueError("beta_star must be >= 0")
    x = stream(seed, "calibration").standard_normal((batch, spec.m))
    natural = measure_beta(deep_logits(spec, x))
    if natural == 0:
        raise ValueError("teacher logits are constant; cannot rescale")
    return ScaledTeacher(spec, beta_star / natural)


def _logit_cosine(a: np.ndarray, b: np.ndarray) -> float:
    a = a - a.mean(axis=1, keepdims=True)
    b = b - b.mean(axis=1, keepdims=True)
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        return 0.0
    return float(np.clip(np.sum(a * b) / (na * nb), -1.0, 1.0))


def run_deep_training(config, teacher: DeepSpec | None = None, student: DeepSpec | None = None):
    """Adam training of every student parameter against a rescaled deep teacher.

    ``config`` is a ``TrainConfig`` with ``model="deep"``; the teacher has
    ``config.teacher_depth`` blocks and the student ``config.depth`` unless
    explicit specs are passed.  Recorded ``weight_norm`` is the head norm and
    ``align_cos`` the cosine between centred student and teacher eval logits.
    """
    from .trainer import Trajectory, TrajectoryPoint

    t0 = time.perf_counter()
    if teacher is None:
        teacher = init_deep(config.m, config.n, config.teacher_depth, config.teacher_seed,
                            gain=config.teacher_init_gain)
    if student is None:
        student = init_deep(config.m, config.n, config.depth,
                            derive_seed(config.data_seed, "student_init"))
    else:
        student = student.copy()
    if (teacher.m, teacher.n) != (student.m, student.n):
        raise ValueError("teacher and student must share m and n")
    opt = config.optimizer
    if opt.kind != "adam":
        raise ValueError("deep training uses Adam")
    tt = calibrate_teacher(teacher, config.beta_star, config.teacher_seed)
    lrs = lr_table(opt.schedule, opt.lr_max)
    taus = dynamic_time_table(opt.schedule, opt.lr_max)
    data = stream(config.data_seed, "data")
    x_eval = stream(config.data_seed, "eval").standard_normal((config.eval_batch, config.m))
    y_eval_star = tt.logits(x_eval)
    teacher_beta = measure_beta(y_eval_star)
    record = set(config.record_steps())
    states = {k: OptimState.zeros_like(v) for k, v in student.params().items()}

    def snapshot(step: int) -> TrajectoryPoint:
        y = deep_logits(student, x_eval)
        return TrajectoryPoint(step, float(taus[step]), float(lrs[step]),
                               float(np.mean(kl_from_logits(y_eval_star, y))), measure_beta(y),
                               float(np.linalg.norm(student.W)), _logit_cosine(y, y_eval_star))

    points = [snapshot(0)]
    diverged = False
    for step in range(config.steps):
        x = data.standard_normal((config.batch_size, config.m))
        p = softmax(tt.logits(x))
        logits, cache = deep_forward(student, x)
        if not np.all(np.isfinite(logits)):
            diverged = True
            break
        grads = deep_backward(student, cache, p)
        new = {}
        for k, w in student.params().items():
            states[k], new[k] = adam_step(states[k], w, grads[k], float(lrs[step]), opt)
        student.set_params(new)
        if step + 1 in record:
            pt = snapshot(step + 1)
            if not math.isfinite(pt.loss):
                diverged = True
                break
            points.append(pt)
    return Trajectory(config, points, time.perf_counter() - t0, diverged, teacher_beta)


__all__ = [
    "DeepSpec", "DeepCache", "ScaledTeacher", "StaleCache",
    "calibrate_teacher", "deep_backward", "deep_forward", "deep_logits", "deep_loss",
    "init_deep", "relu2", "rmsnorm", "rmsnorm_backward", "run_deep_training", "zero_mlp",
]
