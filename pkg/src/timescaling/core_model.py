"""Single-layer softmax teacher/student model.

The teacher weight is ``W* = w_hat * beta_star / sqrt(m)`` with unit-variance
i.i.d. entries in ``w_hat``; inputs are i.i.d. standard normal, so the teacher
logits have standard deviation ``beta_star`` across classes.  The loss is the
batch-mean KL divergence ``D(p || q)`` and its gradient with respect to the
student weight is ``mean((q - p)^T x)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .seeding import make_rng

TEACHER_DISTS = ("normal", "uniform")

# exp() of shifted logits is floored here: e^-700 ~ 1e-304 is still a normal
# double, and subnormal results make np.exp roughly 30x slower.
EXP_FLOOR = -700.0


def _check_finite(v: np.ndarray, what: str) -> None:
    if not np.all(np.isfinite(v)):
        raise ValueError(f"{what} contains non-finite values")


def _exp(shifted: np.ndarray) -> np.ndarray:
    return np.exp(np.maximum(shifted, EXP_FLOOR))


def logsumexp(v, axis: int = -1) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    vmax = np.max(v, axis=axis, keepdims=True)
    out = np.log(np.sum(_exp(v - vmax), axis=axis, keepdims=True)) + vmax
    return np.squeeze(out, axis=axis)


def log_softmax(v, axis: int = -1) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    _check_finite(v, "softmax input")
    shifted = v - np.max(v, axis=axis, keepdims=True)
    return shifted - np.log(np.sum(_exp(shifted), axis=axis, keepdims=True))


def softmax(v, axis: int = -1) -> np.ndarray:
    """Row-max-shifted softmax along ``axis``; rejects non-finite input."""
    v = np.asarray(v, dtype=np.float64)
    _check_finite(v, "softmax input")
    e = _exp(v - np.max(v, axis=axis, keepdims=True))
    return e / np.sum(e, axis=axis, keepdims=True)


def kl_loss(p, q):
    """KL divergence ``sum_i p_i ln(p_i / q_i)`` along the last axis.

    Terms with ``p_i == 0`` contribute exactly zero.  If some ``p_i > 0`` has
    ``q_i == 0`` the divergence is ``inf`` for that row.
    """
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if p.shape != q.shape:
        raise ValueError(f"shape mismatch: p {p.shape} vs q {q.shape}")
    pos = p > 0
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(pos, p * (np.log(np.where(pos, p, 1.0)) - np.log(q)), 0.0)
    return terms.sum(axis=-1)


def kl_from_logits(teacher_logits: np.ndarray, student_logits: np.ndarray) -> np.ndarray:
    """Row-wise KL(softmax(teacher) || softmax(student)) from log-probabilities."""
    logp = log_softmax(teacher_logits)
    logq = log_softmax(student_logits)
    return np.sum(_exp(logp) * (logp - logq), axis=-1)


@dataclass(frozen=True)
class TeacherSpec:
    m: int
    n: int
    beta_star: float
    w_hat: np.ndarray = field(repr=False)
    seed: int
    dist: str = "normal"

    @property
    def w_star(self) -> np.ndarray:
        return self.w_hat * (self.beta_star / math.sqrt(self.m))

    def logits(self, x: np.ndarray) -> np.ndarray:
        return x @ self.w_star.T


def sample_teacher(m: int, n: int, beta_star: float, seed: int, dist: str = "normal") -> TeacherSpec:
    """Draw ``w_hat`` (n x m, row-major) with unit-variance entries.

    ``dist="uniform"`` draws ``sqrt(3) * U(-1, 1)``, which reproduces the
    uniform-init teacher divided by ``temperature`` when
    ``beta_star = 1 / (sqrt(3) * temperature)``.
    """
    if m < 1 or n < 1:
        raise ValueError(f"m and n must be >= 1, got m={m}, n={n}")
    if beta_star < 0:
        raise ValueError(f"beta_star must be >= 0, got {beta_star}")
    rng = make_rng(seed)
    if dist == "normal":
        w_hat = rng.standard_normal((n, m))
    elif dist == "uniform":
        w_hat = math.sqrt(3.0) * rng.uniform(-1.0, 1.0, size=(n, m))
    else:
        raise ValueError(f"unknown teacher_dist {dist!r}; expected one of {TEACHER_DISTS}")
    return TeacherSpec(m=m, n=n, beta_star=float(beta_star), w_hat=w_hat, seed=seed, dist=dist)


def temperature_to_beta(temperature: float) -> float:
    """Inverse temperature of a uniform-init teacher divided by ``temperature``."""
    return 1.0 / (math.sqrt(3.0) * temperature)


@dataclass
class StudentWeights:
    w: np.ndarray
    init_scale: float = 0.0


def init_student(m: int, n: int, init_scale: float = 0.0, seed: int = 0) -> StudentWeights:
    """Uniform(-1/sqrt(m), 1/sqrt(m)) entries times ``init_scale``; zeros if the scale is 0."""
    if init_scale == 0:
        return StudentWeights(np.zeros((n, m)), 0.0)
    bound = 1.0 / math.sqrt(m)
    w = make_rng(seed).uniform(-bound, bound, size=(n, m)) * init_scale
    return StudentWeights(w, float(init_scale))


def sample_inputs(batch_size: int, m: int, rng: np.random.Generator | int) -> np.ndarray:
    if not isinstance(rng, np.random.Generator):
        rng = make_rng(rng)
    return rng.standard_normal((batch_size, m))


@dataclass
class ModelOutput:
    teacher_logits: np.ndarray
    student_logits: np.ndarray
    p: np.ndarray
    q: np.ndarray


def forward(w: np.ndarray, teacher: TeacherSpec, x: np.ndarray) -> ModelOutput:
    y_star = teacher.logits(x)
    y = x @ w.T
    return ModelOutput(y_star, y, softmax(y_star), softmax(y))


def _check_dims(w: np.ndarray, teacher: TeacherSpec, x: np.ndarray) -> None:
    if w.shape != (teacher.n, teacher.m):
        raise ValueError(f"student shape {w.shape} != teacher shape {(teacher.n, teacher.m)}")
    if x.ndim != 2 or x.shape[1] != teacher.m:
        raise ValueError(f"input batch shape {x.shape} incompatible with m={teacher.m}")


def loss_and_grad_logits(y_star: np.ndarray, y: np.ndarray, x: np.ndarray) -> tuple[float, np.ndarray]:
    """Loss and weight gradient given precomputed teacher and student logits."""
    logp = log_softmax(y_star)
    logq = log_softmax(y)
    p = _exp(logp)
    q = _exp(logq)
    loss = float(np.mean(np.sum(p * (logp - logq), axis=1)))
    grad = (q - p).T @ x / x.shape[0]
    return loss, grad


def loss_and_grad(w, teacher: TeacherSpec, x: np.ndarray) -> tuple[float, np.ndarray]:
    """Batch-mean KL loss and its exact gradient ``mean((q - p)^T x)``."""
    w = np.asarray(getattr(w, "w", w), dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    _check_dims(w, teacher, x)
    return loss_and_grad_logits(teacher.logits(x), x @ w.T, x)


def batch_loss(w, teacher: TeacherSpec, x: np.ndarray) -> float:
    w = np.asarray(getattr(w, "w", w), dtype=np.float64)
    _check_dims(w, teacher, x)
    return float(np.mean(kl_from_logits(teacher.logits(x), x @ w.T)))


def measure_beta(logits) -> float:
    """Mean over rows of the (unbiased) logit std across classes."""
    logits = np.asarray(logits, dtype=np.float64)
    if logits.ndim == 1:
        logits = logits[None, :]
    if logits.shape[0] == 0:
        raise ValueError("measure_beta needs at least one row")
    if logits.shape[1] < 2:
        raise ValueError("measure_beta needs n >= 2 classes")
    return float(np.mean(np.std(logits, axis=1, ddof=1)))


def alignment_cosine(w, w_star) -> float:
    """Frobenius cosine between ``w`` and ``w_star``.

    A zero ``w`` has no direction; it is reported as 0.0 rather than raising.
    """
    w = np.asarray(w, dtype=np.float64)
    w_star = np.asarray(w_star, dtype=np.float64)
    if w.shape != w_star.shape:
        raise ValueError(f"shape mismatch: {w.shape} vs {w_star.shape}")
    ns = np.linalg.norm(w_star)
    if ns == 0:
        raise ValueError("reference matrix w_star is zero")
    nw = np.linalg.norm(w)
    if nw == 0:
        return 0.0
    return float(np.clip(np.sum(w * w_star) / (nw * ns), -1.0, 1.0))
