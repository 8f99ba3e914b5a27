"""Aligned-student dynamics ``dbeta/dtau = (c_eff/n) (U(beta) - U(beta*))``.

Integrated with fixed-step RK4.  Three internal-energy models are provided:
the low-temperature series ``U = -c0 + c2/beta^2`` (valid above ``2*c0``), the
high-temperature line ``U = -beta`` and a monotone cubic interpolant of a
Monte-Carlo ``ThermoCurve``.
"""
from __future__ import annotations

import bisect
import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.interpolate import PchipInterpolator
from scipy.optimize import minimize_scalar

from .scaling_fit import loglog_slope
from .thermo import ThermoCurve


class OutOfDomain(ValueError):
    """An internal-energy model was evaluated where it is not defined."""


class _Pchip:
    """Scalar evaluation of a scipy PCHIP without per-call numpy overhead."""

    def __init__(self, x, y):
        pp = PchipInterpolator(np.asarray(x, float), np.asarray(y, float), extrapolate=False)
        self.x = [float(v) for v in pp.x]
        self.c = [[float(pp.c[k, i]) for k in range(4)] for i in range(len(pp.x) - 1)]

    def __call__(self, b: float) -> float:
        x = self.x
        if b < x[0] or b > x[-1]:
            raise OutOfDomain(f"beta={b:g} outside tabulated range [{x[0]:g}, {x[-1]:g}]")
        i = min(bisect.bisect_right(x, b) - 1, len(x) - 2)
        c3, c2, c1, c0 = self.c[i]
        d = b - x[i]
        return ((c3 * d + c2) * d + c1) * d + c0


@dataclass
class UModel:
    kind: str
    c0: float = 0.0
    c2: float = 0.0
    curve: ThermoCurve | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.kind not in ("series_low_temp", "linear_high_temp", "tabulated"):
            raise ValueError(f"unknown U model {self.kind!r}")
        self._u = self._l = None
        if self.kind == "tabulated":
            if self.curve is None:
                raise ValueError("tabulated U model needs a ThermoCurve")
            self._u = _Pchip(self.curve.beta_grid, self.curve.U)
            self._l = _Pchip(self.curve.beta_grid, np.maximum(self.curve.L, 0.0))
            if not self.c0:
                self.c0 = float(-np.min(self.curve.U))

    @classmethod
    def series(cls, c0: float, c2: float) -> "UModel":
        return cls("series_low_temp", c0=c0, c2=c2)

    @classmethod
    def linear(cls) -> "UModel":
        return cls("linear_high_temp")

    @classmethod
    def tabulated(cls, curve: ThermoCurve, c0: float | None = None) -> "UModel":
        return cls("tabulated", c0=c0 or 0.0, curve=curve)

    @property
    def floor(self) -> float:
        return 2.0 * self.c0 if self.kind == "series_low_temp" else 0.0

    def U(self, beta: float) -> float:
        if self.kind == "linear_high_temp":
            return -beta
        if self.kind == "series_low_temp":
            if math.isinf(beta):
                return -self.c0
            if beta <= self.floor:
                raise OutOfDomain(f"series U used at beta={beta:g} <= 2*c0 = {self.floor:g}")
            return -self.c0 + self.c2 / (beta * beta)
        return self._u(beta)

    def loss(self, beta: float, beta_star: float) -> float:
        """Model loss at ``beta``: tabulated L, 0.5*(b*-b)^2, or c2/beta."""
        if self.kind == "tabulated":
            return self._l(beta)
        if self.kind == "linear_high_temp":
            return 0.5 * (beta_star - beta) ** 2
        return self.c2 / beta


@dataclass
class OdeRun:
    beta0: float
    beta_star: float
    c_eff: float
    n: int
    tau_grid: np.ndarray
    beta_of_tau: np.ndarray
    step_size: float
    u_model: UModel = field(repr=False)
    integrator: str = "rk4"

    def loss_model(self) -> np.ndarray:
        return np.array([self.u_model.loss(b, self.beta_star) for b in self.beta_of_tau])

    def to_csv(self, path) -> Path:
        path = Path(path)
        tmp = path.with_name(path.name + ".tmp")
        with tmp.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["tau", "beta", "loss_model"])
            for t, b, l in zip(self.tau_grid, self.beta_of_tau, self.loss_model()):
                w.writerow([repr(float(t)), repr(float(b)), repr(float(l))])
        tmp.replace(path)
        return path


def integrate_beta(u_model: UModel, beta0: float, beta_star: float, c_eff: float, n: int,
                   tau_max: float, step: float | None = None, record_every: int = 1) -> OdeRun:
    """Fixed-step RK4 from ``beta0`` to ``tau_max`` (default step ``tau_max/1e6``).

    Stops early once ``|beta* - beta| < 1e-9``.  ``record_every`` thins the
    stored trajectory; the final point is always kept.
    """
    if beta0 < 0 or tau_max <= 0:
        raise ValueError("need beta0 >= 0 and tau_max > 0")
    h = tau_max / 1e6 if step is None else float(step)
    if h <= 0:
        raise ValueError("step must be > 0")
    u_star = u_model.U(beta_star)
    rate = c_eff / n
    U = u_model.U

    def f(b: float) -> float:
        return rate * (U(b) - u_star)

    if u_model.kind == "series_low_temp" and beta0 <= u_model.floor:
        raise OutOfDomain(f"beta0={beta0:g} below series validity floor {u_model.floor:g}")
    nsteps = max(1, int(round(tau_max / h)))
    taus = [0.0]
    betas = [float(beta0)]
    b = float(beta0)
    upward = beta0 <= beta_star
    k = 0
    while k < nsteps and abs(beta_star - b) >= 1e-9:
        k1 = f(b)
        k2 = f(b + 0.5 * h * k1)
        k3 = f(b + 0.5 * h * k2)
        k4 = f(b + h * k3)
        b = b + h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
        if (b > beta_star) if upward else (b < beta_star):
            b = beta_star
        k += 1
        if k % record_every == 0:
            taus.append(k * h)
            betas.append(b)
    if k % record_every:
        taus.append(k * h)
        betas.append(b)
    return OdeRun(beta0, beta_star, c_eff, n, np.array(taus), np.array(betas), h, u_model)


def closed_form_high_temp(beta0: float, beta_star: float, c_eff: float, n: int, tau):
    """Exponential relaxation of the high-temperature regime; returns (beta, loss)."""
    decay = np.exp(-c_eff * np.asarray(tau, dtype=np.float64) / n)
    beta = beta_star - (beta_star - beta0) * decay
    loss = 0.5 * (beta_star - beta0) ** 2 * decay ** 2
    return beta, loss


def closed_form_cube_root(beta0: float, c2: float, c_eff: float, n: int, tau):
    """beta(tau) for U = -c0 + c2/beta^2 with beta* -> infinity."""
    return np.cbrt(beta0 ** 3 + 3.0 * c2 * c_eff * np.asarray(tau, dtype=np.float64) / n)


@dataclass
class ScalingPrediction:
    beta_exponent: float
    loss_exponent: float
    tau_window: tuple[float, float]
    beta_window: tuple[float, float]


class InsufficientWindow(ValueError):
    def __init__(self, msg: str, tau_window=None):
        super().__init__(msg)
        self.tau_window = tau_window


def predict_intermediate_scaling(run: OdeRun, min_decades: float = 2.0,
                                 points: int = 200) -> ScalingPrediction:
    """Log-log slopes of beta(tau) and L(tau) where ``2*c0 < beta < beta*/5``."""
    c0 = run.u_model.c0
    hi = run.beta_star / 5.0
    tau, beta = run.tau_grid, run.beta_of_tau
    sel = (beta > 2.0 * c0) & (beta < hi) & (tau > 0)
    if sel.sum() < 4:
        raise InsufficientWindow(f"no intermediate window (beta in ({2 * c0:g}, {hi:g}))")
    idx = np.flatnonzero(sel)
    t_lo, t_hi = float(tau[idx[0]]), float(tau[idx[-1]])
    decades = math.log10(t_hi / t_lo)
    if decades < min_decades:
        raise InsufficientWindow(
            f"intermediate window spans {decades:.2f} decades of tau "
            f"([{t_lo:g}, {t_hi:g}]); need {min_decades}", (t_lo, t_hi))
    targets = np.geomspace(t_lo, t_hi, points)
    pick = np.unique(np.clip(np.searchsorted(tau, targets), idx[0], idx[-1]))
    t = tau[pick]
    b = beta[pick]
    loss = np.array([run.u_model.loss(v, run.beta_star) for v in b])
    be = loglog_slope(t, b).slope
    le = loglog_slope(t, loss).slope
    return ScalingPrediction(be, le, (t_lo, t_hi), (float(b[0]), float(b[-1])))


def fit_c_eff(u_model: UModel, beta0: float, beta_star: float, n: int, taus, betas,
              bounds: tuple[float, float] = (1e-3, 1e3), steps: int = 2000) -> float:
    """The single ``c_eff`` that best maps the ODE onto a measured ``beta(tau)``.

    Minimizes the mean squared log-ratio of measured to integrated beta over
    the points with positive beta; the search is on ``log c_eff``.
    """
    taus = np.asarray(taus, dtype=np.float64)
    betas = np.asarray(betas, dtype=np.float64)
    ok = (betas > 0) & (taus > 0)
    if ok.sum() < 2:
        raise ValueError("need >= 2 points with tau > 0 and beta > 0")
    t, b = taus[ok], betas[ok]
    tau_max = float(t.max())

    def cost(log_c: float) -> float:
        run = integrate_beta(u_model, beta0, beta_star, math.exp(log_c), n, tau_max,
                             step=tau_max / steps)
        model = np.interp(t, run.tau_grid, run.beta_of_tau, right=run.beta_of_tau[-1])
        if np.any(model <= 0):
            return math.inf
        return float(np.mean(np.log(b / model) ** 2))

    res = minimize_scalar(cost, bounds=(math.log(bounds[0]), math.log(bounds[1])), method="bounded",
                          options={"xatol": 1e-6})
    return float(math.exp(res.x))
