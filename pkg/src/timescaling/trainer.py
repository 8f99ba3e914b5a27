"""Online teacher/student training runs, sweeps and the preset experiment grids.

Every step draws a fresh Gaussian batch from the ``data`` stream of
``data_seed``; the recorded loss is measured on a fixed held-out batch of 4096
inputs drawn from the ``eval`` stream, so exponent fits are not disturbed by
evaluation noise.
"""
from __future__ import annotations

import csv
import dataclasses
import itertools
import json
import logging
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .core_model import (
    alignment_cosine,
    init_student,
    kl_from_logits,
    loss_and_grad_logits,
    measure_beta,
    sample_teacher,
)
from .optim import OptimConfig, OptimState, ScheduleSpec, dynamic_time_table, lr_table, optimizer_step
from .seeding import derive_seed, stream

log = logging.getLogger(__name__)

TRAJECTORY_FIELDS = ("step", "tau", "lr", "loss", "beta_measured", "weight_norm", "align_cos")
EVAL_BATCH = 4096


@dataclass(frozen=True)
class TrainConfig:
    m: int = 32
    n: int = 128
    beta_star: float = 1.0
    batch_size: int = 1024
    steps: int = 1000
    optimizer: OptimConfig = field(default_factory=OptimConfig)
    init_scale: float = 0.0
    teacher_seed: int = 0
    data_seed: int = 1
    # None -> ~200 geometrically spaced records
    record_every: int | None = None
    record_points: int = 200
    teacher_dist: str = "normal"
    eval_batch: int = EVAL_BATCH
    # "linear" is the one-layer toy; "deep" adds residual MLP blocks
    model: str = "linear"
    depth: int = 6
    teacher_depth: int = 128
    # multiplies the deep teacher's uniform init bounds (head scale is rescaled away)
    teacher_init_gain: float = 1.0

    def __post_init__(self):
        if self.steps < 1 or self.batch_size < 1:
            raise ValueError("steps and batch_size must be >= 1")
        if self.optimizer.schedule.total_steps != self.steps:
            sched = dataclasses.replace(self.optimizer.schedule, total_steps=self.steps)
            object.__setattr__(self, "optimizer", dataclasses.replace(self.optimizer, schedule=sched))
        if self.model not in ("linear", "deep"):
            raise ValueError(f"unknown model {self.model!r}")

    def record_steps(self) -> list[int]:
        if self.record_every:
            s = set(range(0, self.steps + 1, self.record_every))
        else:
            want = min(self.record_points, self.steps)
            k = want
            while True:
                s = set(np.unique(np.round(np.geomspace(1, self.steps, k))).astype(int))
                if len(s) >= want or k > 20 * want:
                    break
                k = int(k * 1.25) + 1
        s |= {0, self.steps}
        return sorted(s)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


@dataclass(frozen=True)
class TrajectoryPoint:
    step: int
    tau: float
    lr: float
    loss: float
    beta_measured: float
    weight_norm: float
    align_cos: float


@dataclass
class Trajectory:
    config: TrainConfig
    points: list[TrajectoryPoint]
    wall_time: float = 0.0
    diverged: bool = False
    teacher_beta: float = float("nan")

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(p, name) for p in self.points], dtype=np.float64)

    def to_csv(self, path) -> Path:
        return write_trajectory_csv(self.points, path)


def _fmt(v) -> str:
    return str(v) if isinstance(v, (int, np.integer)) else repr(float(v))


def write_trajectory_csv(points, path) -> Path:
    """Write atomically (temp file then rename)."""
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with tmp.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(TRAJECTORY_FIELDS)
        for p in points:
            w.writerow([_fmt(getattr(p, k)) for k in TRAJECTORY_FIELDS])
    tmp.replace(path)
    return path


def read_trajectory_csv(path) -> list[TrajectoryPoint]:
    with Path(path).open(newline="") as fh:
        reader = csv.DictReader(fh)
        missing = set(TRAJECTORY_FIELDS) - set(reader.fieldnames or ())
        if missing:
            raise ValueError(f"{path}: missing columns {sorted(missing)}")
        return [TrajectoryPoint(int(r["step"]), *(float(r[k]) for k in TRAJECTORY_FIELDS[1:]))
                for r in reader]


def run_training(config: TrainConfig) -> Trajectory:
    """Train one student; deterministic in the config (seeds included)."""
    if config.model == "deep":
        from .deep_model import run_deep_training
        return run_deep_training(config)
    t0 = time.perf_counter()
    teacher = sample_teacher(config.m, config.n, config.beta_star, config.teacher_seed,
                             config.teacher_dist)
    w_star = teacher.w_star
    w = init_student(config.m, config.n, config.init_scale,
                     derive_seed(config.data_seed, "student_init")).w
    opt = config.optimizer
    state = OptimState.zeros_like(w)
    lrs = lr_table(opt.schedule, opt.lr_max)
    with np.errstate(over="ignore"):
        taus = dynamic_time_table(opt.schedule, opt.lr_max)
    data = stream(config.data_seed, "data")
    x_eval = stream(config.data_seed, "eval").standard_normal((config.eval_batch, config.m))
    y_eval_star = x_eval @ w_star.T
    teacher_beta = measure_beta(y_eval_star)
    record = set(config.record_steps())
    points: list[TrajectoryPoint] = []
    has_ref = teacher.beta_star > 0

    def snapshot(step: int) -> TrajectoryPoint:
        y = x_eval @ w.T
        return TrajectoryPoint(
            step, float(taus[step]), float(lrs[step]),
            float(np.mean(kl_from_logits(y_eval_star, y))),
            measure_beta(y), float(np.linalg.norm(w)),
            alignment_cosine(w, w_star) if has_ref else 0.0)

    diverged = False
    points.append(snapshot(0))
    with np.errstate(over="ignore", invalid="ignore"):
        for step in range(config.steps):
            x = data.standard_normal((config.batch_size, config.m))
            y = x @ w.T
            if not np.all(np.isfinite(y)):
                diverged = True
                break
            loss, grad = loss_and_grad_logits(x @ w_star.T, y, x)
            if not (math.isfinite(loss) and np.all(np.isfinite(grad))):
                diverged = True
                break
            state, w = optimizer_step(state, w, grad, float(lrs[step]), opt)
            if step + 1 in record:
                pt = snapshot(step + 1) if np.all(np.isfinite(w)) else None
                if pt is None or not (math.isfinite(pt.loss) and math.isfinite(pt.beta_measured)):
                    diverged = True
                    break
                points.append(pt)
    if diverged:
        log.warning("run diverged at step %d (beta*=%g, lr=%g)", step, config.beta_star, opt.lr_max)
    return Trajectory(config, points, time.perf_counter() - t0, diverged, teacher_beta)


# --- sweeps -----------------------------------------------------------------


def _replace_path(cfg, key: str, value):
    """dataclasses.replace with dotted keys, e.g. ``optimizer.lr_max``."""
    head, _, rest = key.partition(".")
    if rest:
        return dataclasses.replace(cfg, **{head: _replace_path(getattr(cfg, head), rest, value)})
    if not hasattr(cfg, head):
        raise KeyError(f"{type(cfg).__name__} has no field {head!r}")
    return dataclasses.replace(cfg, **{head: value})


@dataclass
class SweepConfig:
    name: str
    base: TrainConfig
    axes: dict[str, list] = field(default_factory=dict)
    master_seed: int = 0
    # extra per-cell field updates that are functions of the axis values
    derived: dict[str, str] = field(default_factory=dict)

    def cells(self) -> list[tuple[dict, TrainConfig]]:
        keys = list(self.axes)
        teacher_seed = derive_seed(self.master_seed, "teacher")
        out = []
        for idx, combo in enumerate(itertools.product(*(self.axes[k] for k in keys))):
            params = dict(zip(keys, combo))
            cfg = dataclasses.replace(self.base, teacher_seed=teacher_seed,
                                      data_seed=derive_seed(self.master_seed, "data", idx))
            for k, v in params.items():
                if k not in VIRTUAL_AXES:
                    cfg = _replace_path(cfg, k, v)
            for k, expr in self.derived.items():
                cfg = _replace_path(cfg, k, _DERIVED[expr](cfg, params))
            out.append((params, cfg))
        return out


def _init_scale_from_ratio(cfg: TrainConfig, params: dict) -> float:
    # uniform init: logit std = init_scale / sqrt(3)
    return math.sqrt(3.0) * params["init_ratio"] * cfg.beta_star


_DERIVED = {"init_scale_from_ratio": _init_scale_from_ratio}
# axes that are not config fields; they only feed ``derived`` expressions
VIRTUAL_AXES = {"init_ratio"}


@dataclass
class SweepResult:
    sweep: SweepConfig
    cells: list[dict]
    trajectories: list[Trajectory]
    manifest_path: Path | None = None


def _run_cell(cfg: TrainConfig) -> Trajectory:
    return run_training(cfg)


def run_sweep(sweep: SweepConfig, out_dir=None, workers: int = 1) -> SweepResult:
    """Run every cell; write ``cell_XXXX.csv`` files and ``manifest.json`` if ``out_dir``."""
    cells = sweep.cells()
    if not cells:
        raise ValueError("sweep grid is empty")
    configs = [c for _, c in cells]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            trajs = list(ex.map(_run_cell, configs))
    else:
        trajs = [_run_cell(c) for c in configs]
    entries = []
    manifest_path = None
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
    for idx, ((params, cfg), tr) in enumerate(zip(cells, trajs)):
        entry = {"index": idx, "params": params, "diverged": tr.diverged,
                 "teacher_beta": tr.teacher_beta, "data_seed": cfg.data_seed}
        if out_dir is not None:
            fname = f"cell_{idx:04d}.csv"
            tr.to_csv(out / fname)
            entry["path"] = fname
        entries.append(entry)
    if out_dir is not None:
        manifest = {
            "name": sweep.name,
            "master_seed": sweep.master_seed,
            "axes": sweep.axes,
            "base_config": sweep.base.to_dict(),
            "cells": entries,
            "version": __version__,
        }
        manifest_path = out / "manifest.json"
        tmp = manifest_path.with_name("manifest.json.tmp")
        tmp.write_text(json.dumps(manifest, indent=2, sort_keys=True))
        os.replace(tmp, manifest_path)
    return SweepResult(sweep, entries, trajs, manifest_path)


# --- presets ----------------------------------------------------------------


def _temperature_grid() -> list[float]:
    # temperatures 1e-3 .. 1, beta* = 1 / (sqrt(3) * temperature): ~577 .. ~0.58
    return [float(1.0 / (math.sqrt(3.0) * t)) for t in np.logspace(-3, 0, 8)]


def _logspace(a: float, b: float, k: int) -> list[float]:
    return [float(v) for v in np.logspace(a, b, k)]


def preset(name: str) -> SweepConfig:
    if name not in PRESETS:
        raise KeyError(f"unknown preset {name!r}; valid: {', '.join(sorted(PRESETS))}")
    return PRESETS[name]()


def _adam(lr=1e-3, **kw) -> OptimConfig:
    return OptimConfig(kind="adam", lr_max=lr, **kw)


def _adam_temp_lr() -> SweepConfig:
    base = TrainConfig(batch_size=1024, steps=2000, optimizer=_adam())
    return SweepConfig("adam_temp_lr", base,
                       {"beta_star": _temperature_grid(), "optimizer.lr_max": _logspace(-3, 0, 12)})


def _sgd_temp_lr() -> SweepConfig:
    base = TrainConfig(batch_size=1024, steps=2000, optimizer=OptimConfig(kind="sgd"))
    return SweepConfig("sgd_temp_lr", base,
                       {"beta_star": _temperature_grid(), "optimizer.lr_max": _logspace(-2, 1, 12)})


def _adam_init_scan() -> SweepConfig:
    base = TrainConfig(beta_star=96.2, batch_size=1024, steps=100_000, optimizer=_adam())
    return SweepConfig("adam_init_scan", base,
                       {"init_ratio": [float(v) for v in np.linspace(0, 1, 8)],
                        "optimizer.lr_max": _logspace(-3, 0, 12)},
                       derived={"init_scale": "init_scale_from_ratio"})


def _adam_cosine() -> SweepConfig:
    sched = ScheduleSpec(kind="warmup_cosine", total_steps=100_000)
    base = TrainConfig(beta_star=96.2, batch_size=1024, steps=100_000,
                       optimizer=_adam(0.15, schedule=sched))
    return SweepConfig("adam_cosine", base,
                       {"init_ratio": [float(v) for v in np.linspace(0, 1, 8)]},
                       derived={"init_scale": "init_scale_from_ratio"})


def _adam_weight_decay() -> SweepConfig:
    base = TrainConfig(beta_star=11.5, batch_size=2048, steps=1000,
                       optimizer=_adam(weight_decay=0.05))
    return SweepConfig("adam_weight_decay", base, {"optimizer.lr_max": _logspace(-3, 0, 13)})


def _deep_residual() -> SweepConfig:
    base = TrainConfig(batch_size=1024, steps=40_000, optimizer=_adam(6e-4),
                       model="deep", depth=6, teacher_depth=128)
    return SweepConfig("deep_residual", base, {"beta_star": _temperature_grid()})


PRESETS = {
    "adam_temp_lr": _adam_temp_lr,
    "sgd_temp_lr": _sgd_temp_lr,
    "adam_init_scan": _adam_init_scan,
    "adam_cosine": _adam_cosine,
    "adam_weight_decay": _adam_weight_decay,
    "deep_residual": _deep_residual,
}
