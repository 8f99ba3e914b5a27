"""Command-line entry point: ``timescaling <subcommand> ...``.

Errors go to stderr as a single JSON line ``{"error": kind, "code": n, "message": ...}``
and the process exits with the code from ``EXIT_CODES``.
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .optim import OptimConfig, ScheduleSpec
from .seeding import derive_seed

EXIT_CODES = {
    "ok": 0,
    "usage": 2,
    "missing_file": 3,
    "malformed_input": 4,
    "invalid_value": 5,
    "numerical": 6,
    "selftest_failed": 7,
}


class CliError(Exception):
    def __init__(self, kind: str, message: str):
        super().__init__(message)
        self.kind = kind
        self.code = EXIT_CODES[kind]


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # one-line, machine-parsable usage errors
        raise CliError("usage", message)


# --- config files -------------------------------------------------------------


def parse_config_text(text: str, source: str = "<config>") -> dict[str, str | list[str]]:
    """Flat ``key = value`` lines; ``#`` starts a comment; commas make a list."""
    out: dict[str, str | list[str]] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise CliError("malformed_input", f"{source}:{lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        if not key or not value:
            raise CliError("malformed_input", f"{source}:{lineno}: empty key or value")
        if key in out:
            raise CliError("malformed_input", f"{source}:{lineno}: duplicate key {key!r}")
        out[key] = [v.strip() for v in value.split(",")] if "," in value else value
    return out


def _read_config(path: str) -> dict:
    p = Path(path)
    if not p.is_file():
        raise CliError("missing_file", f"config file not found: {path}")
    return parse_config_text(p.read_text(), str(p))


def _convert(raw: str, default, key: str):
    try:
        if raw.lower() in ("none", "null"):
            return None
        if isinstance(default, bool):
            return raw.lower() in ("1", "true", "yes")
        if isinstance(default, int) or default is None:
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        return raw
    except ValueError as exc:
        raise CliError("malformed_input", f"bad value for {key!r}: {raw!r}") from exc


def _field_table() -> dict[str, tuple[str, str, object]]:
    """config key -> (target, field, default).  ``kind`` is the optimizer kind;
    the schedule kind is ``schedule`` (or ``schedule.kind``)."""
    from .trainer import TrainConfig

    table: dict[str, tuple[str, str, object]] = {}
    for target, cls in (("schedule", ScheduleSpec), ("optimizer", OptimConfig), ("train", TrainConfig)):
        inst = cls()
        for f in dataclasses.fields(cls):
            if f.name in ("optimizer", "schedule"):
                continue
            table[f"{target}.{f.name}"] = (target, f.name, getattr(inst, f.name))
            if target == "schedule" and f.name == "kind":
                continue
            table.setdefault(f.name, (target, f.name, getattr(inst, f.name)))
    table["schedule"] = table["schedule.kind"]
    return table


def build_train_config(values: dict, seed: int | None = None):
    """TrainConfig from scalar config values; list values are rejected."""
    from .trainer import TrainConfig

    table = _field_table()
    parts: dict[str, dict] = {"train": {}, "optimizer": {}, "schedule": {}}
    for key, raw in values.items():
        if key not in table:
            raise CliError("malformed_input", f"unknown config key {key!r}")
        if isinstance(raw, list):
            raise CliError("malformed_input", f"{key!r}: lists are only allowed in sweep configs")
        target, name, default = table[key]
        parts[target][name] = _convert(raw, default, key)
    if seed is not None:
        parts["train"].setdefault("teacher_seed", derive_seed(seed, "teacher"))
        parts["train"].setdefault("data_seed", derive_seed(seed, "data"))
    try:
        steps = parts["train"].get("steps", TrainConfig().steps)
        sched = ScheduleSpec(**{**parts["schedule"], "total_steps": steps})
        opt = OptimConfig(**parts["optimizer"], schedule=sched)
        return TrainConfig(**parts["train"], optimizer=opt)
    except (TypeError, ValueError) as exc:
        raise CliError("invalid_value", str(exc)) from exc


_SWEEP_KEYS = ("name", "master_seed")


def build_sweep_config(values: dict, seed: int | None = None):
    """Scalar keys configure the base run; list-valued keys become sweep axes."""
    from .trainer import SweepConfig

    table = _field_table()
    scalars = {k: v for k, v in values.items() if not isinstance(v, list) and k not in _SWEEP_KEYS}
    base = build_train_config(scalars)
    axes = {}
    for key, raw in values.items():
        if not isinstance(raw, list):
            continue
        if key not in table:
            raise CliError("malformed_input", f"unknown config key {key!r}")
        target, name, default = table[key]
        if target == "schedule":
            raise CliError("malformed_input", f"schedule field {key!r} cannot be swept")
        path = name if target == "train" else f"optimizer.{name}"
        axes[path] = [_convert(v, default, key) for v in raw]
    master = seed if seed is not None else int(values.get("master_seed", 0))
    return SweepConfig(str(values.get("name", "custom")), base, axes, master)


# --- CSV helpers ----------------------------------------------------------------


def read_columns(path: str) -> dict[str, np.ndarray]:
    p = Path(path)
    if not p.is_file():
        raise CliError("missing_file", f"input not found: {path}")
    try:
        with p.open(newline="") as fh:
            reader = csv.DictReader(fh)
            if not reader.fieldnames:
                raise CliError("malformed_input", f"{path}: empty CSV")
            cols = {k: [] for k in reader.fieldnames}
            for lineno, row in enumerate(reader, 2):
                for k in reader.fieldnames:
                    try:
                        cols[k].append(float(row[k]))
                    except (TypeError, ValueError):
                        raise CliError("malformed_input",
                                       f"{path}:{lineno}: column {k!r} value {row[k]!r} is not a number")
    except UnicodeDecodeError as exc:
        raise CliError("malformed_input", f"{path}: not a text CSV") from exc
    return {k: np.array(v) for k, v in cols.items()}


def _atomic_write(path: Path, data: bytes) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(data)
    os.replace(tmp, path)


def _emit(obj) -> None:
    print(json.dumps(obj, sort_keys=True))


# --- subcommands ----------------------------------------------------------------


def cmd_train(args) -> None:
    from .trainer import run_training

    cfg = build_train_config(_read_config(args.config), args.seed)
    tr = run_training(cfg)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    tr.to_csv(out)
    last = tr.points[-1]
    _emit({"out": str(out), "steps": last.step, "tau": last.tau, "loss": last.loss,
           "beta_measured": last.beta_measured, "diverged": tr.diverged})


def cmd_sweep(args) -> None:
    from .trainer import preset, run_sweep

    if bool(args.preset) == bool(args.config):
        raise CliError("usage", "give exactly one of --preset or --config")
    if args.preset:
        try:
            sweep = preset(args.preset)
        except KeyError as exc:
            raise CliError("invalid_value", exc.args[0]) from exc
        if args.seed is not None:
            sweep.master_seed = args.seed
    else:
        sweep = build_sweep_config(_read_config(args.config), args.seed)
    if args.steps is not None:
        sweep.base = dataclasses.replace(sweep.base, steps=args.steps)
    res = run_sweep(sweep, args.out, workers=args.workers)
    _emit({"manifest": str(res.manifest_path), "cells": len(res.cells),
           "diverged": sum(c["diverged"] for c in res.cells)})


def cmd_thermo(args) -> None:
    from .thermo import ThermoConfig, fit_expansion_coeffs, thermo_curve

    cfg = ThermoConfig(n=args.n, num_energy_sets=args.sets, batch_per_set=args.batch, seed=args.seed)
    grid = np.linspace(0.0, args.beta_star, args.points)
    curve = thermo_curve(args.beta_star, args.n, cfg, grid)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    curve.to_csv(out)
    report = {"out": str(out), "U_min": float(np.min(curve.U))}
    try:
        lo = max(2.0 * -float(np.min(curve.U)) * 1.5, grid[1])
        fit = fit_expansion_coeffs(curve, (lo, args.beta_star))
        report.update(c0=fit.c0, c1=fit.c1, c2=fit.c2, fit_window=list(fit.fit_window))
    except ValueError as exc:
        report["fit_error"] = str(exc)
    _emit(report)


def cmd_ode(args) -> None:
    from .ansatz_ode import InsufficientWindow, UModel, integrate_beta, predict_intermediate_scaling
    from .thermo import ThermoCurve

    if args.model == "linear":
        model = UModel.linear()
    elif args.model == "series":
        if args.c0 is None or args.c2 is None:
            raise CliError("usage", "--model series needs --c0 and --c2")
        model = UModel.series(args.c0, args.c2)
    else:
        if not args.curve:
            raise CliError("usage", "--model tabulated needs --curve CSV")
        if not Path(args.curve).is_file():
            raise CliError("missing_file", f"curve not found: {args.curve}")
        try:
            curve = ThermoCurve.from_csv(args.curve, args.beta_star, args.n)
        except (KeyError, ValueError) as exc:
            raise CliError("malformed_input", f"{args.curve}: {exc}") from exc
        model = UModel.tabulated(curve, args.c0)
    run = integrate_beta(model, args.beta0, args.beta_star, args.c_eff, args.n, args.tau_max,
                         args.step, record_every=args.record_every)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    run.to_csv(out)
    report = {"out": str(out), "beta_final": float(run.beta_of_tau[-1]),
              "tau_final": float(run.tau_grid[-1])}
    try:
        pred = predict_intermediate_scaling(run)
        report.update(beta_exponent=pred.beta_exponent, loss_exponent=pred.loss_exponent,
                      tau_window=list(pred.tau_window))
    except InsufficientWindow as exc:
        report["scaling"] = str(exc)
    _emit(report)


def _parse_window(text: str | None):
    if text is None:
        return None
    try:
        lo, hi = text.split(":")
        return (int(lo) if lo else 0, int(hi) if hi else None)
    except ValueError as exc:
        raise CliError("usage", f"--window must look like START:STOP, got {text!r}") from exc


def cmd_fit(args) -> None:
    from .scaling_fit import auto_window, fit_power_law_offset

    cols = read_columns(args.input)
    for c in (args.x, "loss"):
        if c not in cols:
            raise CliError("malformed_input", f"{args.input}: missing column {c!r}")
    x, loss = cols[args.x], cols["loss"]
    keep = x > 0
    x, loss = x[keep], loss[keep]
    window = _parse_window(args.window)
    if window is None and args.auto:
        window = auto_window(x, loss, per_decade=args.per_decade)
    fit = fit_power_law_offset(x, loss, window, bootstrap=args.bootstrap, seed=args.seed or 0)
    _emit(fit.report())


def cmd_entropy(args) -> None:
    from .entropy_matcher import solve_beta_for_entropy

    sol = solve_beta_for_entropy(args.n, args.target, args.tol, args.samples, args.seed or 0)
    _emit(sol.report())


def cmd_plot(args) -> None:
    from .svgplot import AxesSpec, Series, render_lines_svg

    labels = args.labels.split(",") if args.labels else [Path(p).stem for p in args.input]
    if len(labels) != len(args.input):
        raise CliError("usage", "--labels needs one label per input")
    series = []
    for path, label in zip(args.input, labels):
        cols = read_columns(path)
        for c in (args.x, args.y):
            if c not in cols:
                raise CliError("malformed_input", f"{path}: missing column {c!r}")
        x, y = cols[args.x], cols[args.y]
        if args.logx:
            x, y = x[x > 0], y[x > 0]
        series.append(Series(label, x, y))
    axes = AxesSpec(args.logx, args.logy, args.x, args.y, args.title or "", args.slope)
    _atomic_write(Path(args.out), render_lines_svg(series, axes))
    _emit({"out": args.out, "series": len(series)})


def cmd_selftest(args) -> None:
    from .selftest import run_selftest

    results = run_selftest()
    for name, ok, detail in results:
        print(f"{'PASS' if ok else 'FAIL'} {name} {detail}")
    failed = [r[0] for r in results if not r[1]]
    if failed:
        raise CliError("selftest_failed", f"{len(failed)} check(s) failed: {', '.join(failed)}")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="timescaling", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def seed_arg(sp):
        sp.add_argument("--seed", type=int, default=None, help="master seed for all randomness")

    s = sub.add_parser("train", help="single run from a key = value config")
    s.add_argument("--config", required=True)
    s.add_argument("--out", default="trajectory.csv")
    seed_arg(s)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("sweep", help="grid of runs from a preset or config")
    s.add_argument("--preset")
    s.add_argument("--config")
    s.add_argument("--out", default="sweep_out")
    s.add_argument("--workers", type=int, default=1)
    s.add_argument("--steps", type=int, default=None, help="override steps for every cell")
    seed_arg(s)
    s.set_defaults(func=cmd_sweep)

    s = sub.add_parser("thermo", help="Monte-Carlo thermodynamic curves")
    s.add_argument("--beta-star", type=float, required=True)
    s.add_argument("--n", type=int, required=True)
    s.add_argument("--sets", type=int, default=10)
    s.add_argument("--batch", type=int, default=1024)
    s.add_argument("--points", type=int, default=100)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", default="thermo.csv")
    s.set_defaults(func=cmd_thermo)

    s = sub.add_parser("ode", help="integrate the aligned-student equation")
    s.add_argument("--model", choices=("linear", "series", "tabulated"), default="series")
    s.add_argument("--beta0", type=float, required=True)
    s.add_argument("--beta-star", type=float, required=True)
    s.add_argument("--c-eff", type=float, default=1.0)
    s.add_argument("--n", type=int, default=128)
    s.add_argument("--tau-max", type=float, required=True)
    s.add_argument("--step", type=float, default=None)
    s.add_argument("--record-every", type=int, default=1000)
    s.add_argument("--c0", type=float, default=None)
    s.add_argument("--c2", type=float, default=None)
    s.add_argument("--curve")
    s.add_argument("--out", default="ode.csv")
    s.set_defaults(func=cmd_ode)

    s = sub.add_parser("fit", help="offset power-law fit of a loss curve")
    s.add_argument("--input", required=True)
    s.add_argument("--x", choices=("tau", "step"), default="tau")
    s.add_argument("--window", help="index range START:STOP")
    s.add_argument("--auto", action="store_true", help="auto-select the trailing window")
    s.add_argument("--per-decade", type=float, default=10.0)
    s.add_argument("--bootstrap", type=int, default=200)
    seed_arg(s)
    s.set_defaults(func=cmd_fit)

    s = sub.add_parser("entropy", help="solve beta for a target softmax entropy")
    s.add_argument("--n", type=int, required=True)
    s.add_argument("--target", type=float, required=True)
    s.add_argument("--tol", type=float, default=0.25)
    s.add_argument("--samples", type=int, default=1024)
    seed_arg(s)
    s.set_defaults(func=cmd_entropy)

    s = sub.add_parser("plot", help="SVG line plot of CSV columns")
    s.add_argument("--input", nargs="+", required=True)
    s.add_argument("--x", default="tau")
    s.add_argument("--y", default="loss")
    s.add_argument("--logx", action="store_true")
    s.add_argument("--logy", action="store_true")
    s.add_argument("--labels")
    s.add_argument("--title")
    s.add_argument("--slope", type=float, default=None, help="reference power-law slope")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_plot)

    s = sub.add_parser("selftest", help="run the built-in invariant checks")
    s.set_defaults(func=cmd_selftest)
    return p


def main(argv: list[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        args.func(args)
        return 0
    except CliError as exc:
        err = exc
    except FileNotFoundError as exc:
        err = CliError("missing_file", str(exc))
    except ArithmeticError as exc:
        err = CliError("numerical", str(exc))
    except ValueError as exc:
        err = CliError("invalid_value", str(exc))
    print(json.dumps({"error": err.kind, "code": err.code, "message": str(err)}), file=sys.stderr)
    return err.code


if __name__ == "__main__":
    sys.exit(main())
