"""Fast built-in invariant checks run by ``timescaling selftest``."""
from __future__ import annotations

import math

import numpy as np

from .seeding import make_rng


def _fd_grad(f, w: np.ndarray, h: float = 1e-5) -> np.ndarray:
    g = np.zeros_like(w)
    for idx in np.ndindex(w.shape):
        old = w[idx]
        w[idx] = old + h
        fp = f()
        w[idx] = old - h
        fm = f()
        w[idx] = old
        g[idx] = (fp - fm) / (2 * h)
    return g


def _rel_err(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.max(np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), 1e-6)))


def check_softmax() -> tuple[bool, str]:
    from .core_model import softmax

    v = make_rng(1).standard_normal((5, 9)) * 300
    p = softmax(v)
    err = max(np.max(np.abs(p.sum(axis=1) - 1)), np.max(np.abs(softmax(v + 1e3) - p)))
    return bool(err < 1e-12), f"max_err={err:.2e}"


def check_core_gradient() -> tuple[bool, str]:
    from .core_model import batch_loss, loss_and_grad, sample_teacher

    rng = make_rng(2)
    teacher = sample_teacher(8, 16, 2.0, 3)
    w = rng.standard_normal((16, 8)) * 0.3
    x = rng.standard_normal((8, 8))
    _, g = loss_and_grad(w, teacher, x)
    err = _rel_err(g, _fd_grad(lambda: batch_loss(w, teacher, x), w))
    return err < 1e-4, f"rel_err={err:.2e}"


def check_deep_gradient() -> tuple[bool, str]:
    from .core_model import softmax
    from .deep_model import deep_backward, deep_forward, deep_loss, init_deep

    rng = make_rng(4)
    spec = init_deep(4, 6, 2, 5)
    spec.b = rng.standard_normal(spec.b.shape) * 0.3
    x = rng.standard_normal((8, 4))
    p = softmax(rng.standard_normal((8, 6)) * 2)
    _, cache = deep_forward(spec, x)
    g = deep_backward(spec, cache, p)
    err = max(_rel_err(g[k], _fd_grad(lambda: deep_loss(spec, x, p), getattr(spec, k)))
              for k in ("A", "b", "B", "W"))
    return err < 1e-4, f"rel_err={err:.2e}"


def check_adam_first_step() -> tuple[bool, str]:
    from .optim import OptimConfig, OptimState, adam_step

    w = np.zeros((3, 3))
    g = make_rng(6).standard_normal((3, 3))
    _, w1 = adam_step(OptimState.zeros_like(w), w, g, 0.01, OptimConfig(kind="adam"))
    err = float(np.max(np.abs(np.abs(w1) - 0.01)))
    return err < 1e-8, f"max_dev={err:.2e}"


def check_thermo_identity() -> tuple[bool, str]:
    from .thermo import ThermoConfig, ansatz_loss_and_grad

    cfg = ThermoConfig(n=32, num_energy_sets=2, batch_per_set=256)
    at = ansatz_loss_and_grad(10.0, 10.0, 32, cfg)
    off = ansatz_loss_and_grad(3.0, 10.0, 32, cfg)
    err = max(abs(at.L), abs(at.dLdBeta), abs(off.L - off.L_direct),
              abs(off.dLdBeta - off.dLdBeta_direct))
    return err < 1e-10, f"max_err={err:.2e}"


def check_rk4() -> tuple[bool, str]:
    from .ansatz_ode import UModel, closed_form_high_temp, integrate_beta

    n, c = 128, 1.0
    run = integrate_beta(UModel.linear(), 0.0, 0.5, c, n, 5 * n / c, step=0.5)
    ref, _ = closed_form_high_temp(0.0, 0.5, c, n, run.tau_grid[-1])
    err = abs(run.beta_of_tau[-1] / float(ref) - 1)
    return err < 1e-6, f"rel_err={err:.2e}"


def check_power_law_fit() -> tuple[bool, str]:
    from .scaling_fit import fit_power_law_offset

    t = np.geomspace(1, 1e3, 40)
    fit = fit_power_law_offset(t, 2.0 * t ** (-1 / 3) + 1.69, bootstrap=0)
    err = max(abs(fit.alpha_tau - 1 / 3), abs(fit.offset - 1.69))
    return err < 1e-3, f"alpha={fit.alpha_tau:.4f} offset={fit.offset:.4f}"


def check_entropy_monotone() -> tuple[bool, str]:
    from .entropy_matcher import mean_entropy

    hs = [mean_entropy(64, b, samples=64).H for b in np.linspace(0, 20, 12)]
    ok = all(a > b for a, b in zip(hs, hs[1:])) and abs(hs[0] - math.log(64)) < 1e-12
    return ok, f"H(0)={hs[0]:.6f} H(20)={hs[-1]:.4f}"


def check_svg_deterministic() -> tuple[bool, str]:
    from .svgplot import AxesSpec, Series, render_lines_svg

    t = np.geomspace(1, 1e3, 30)
    s = [Series("a", t, t ** (-1 / 3))]
    a = render_lines_svg(s, AxesSpec(True, True, slope_guide=-1 / 3))
    b = render_lines_svg(s, AxesSpec(True, True, slope_guide=-1 / 3))
    return a == b, f"bytes={len(a)}"


CHECKS = {
    "softmax_normalization": check_softmax,
    "core_gradient": check_core_gradient,
    "deep_gradient": check_deep_gradient,
    "adam_first_step": check_adam_first_step,
    "thermo_identity": check_thermo_identity,
    "rk4_closed_form": check_rk4,
    "power_law_fit": check_power_law_fit,
    "entropy_monotone": check_entropy_monotone,
    "svg_deterministic": check_svg_deterministic,
}


def run_selftest() -> list[tuple[str, bool, str]]:
    out = []
    for name, fn in CHECKS.items():
        try:
            ok, detail = fn()
        except Exception as exc:  # a crashing check is a failing check
            ok, detail = False, f"{type(exc).__name__}: {exc}"
        out.append((name, bool(ok), detail))
    return out
