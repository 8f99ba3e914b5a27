"""Power-law exponent extraction.

* ``loglog_slope``: ordinary least squares on (ln x, ln y).
* ``fit_power_law_offset``: ``L = c * tau^(-alpha) + L_offset`` by profiling the
  offset (grid, then golden section) with log-space residuals and a bootstrap
  error on ``alpha``.
* ``auto_window``: trailing stretch where the 5-point local slope is stable.
* ``collapse_score``: spread between loss curves on a shared log-x grid.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from .seeding import stream


@dataclass
class LogLogFit:
    slope: float
    intercept: float
    stderr: float


def _window(n: int, window) -> slice:
    if window is None:
        return slice(0, n)
    if isinstance(window, slice):
        return window
    lo, hi = window
    return slice(lo, hi)


def loglog_slope(xs, ys, window=None) -> LogLogFit:
    """Least-squares line through (ln x, ln y) restricted to ``window`` (index range)."""
    xs = np.asarray(xs, dtype=np.float64)
    ys = np.asarray(ys, dtype=np.float64)
    sl = _window(len(xs), window)
    x, y = xs[sl], ys[sl]
    if len(x) < 4:
        raise ValueError(f"need >= 4 points in the window, got {len(x)}")
    bad = np.flatnonzero((x <= 0) | (y <= 0) | ~np.isfinite(x) | ~np.isfinite(y))
    if bad.size:
        raise ValueError(f"non-positive or non-finite value at window index {int(bad[0])}")
    lx, ly = np.log(x), np.log(y)
    A = np.column_stack([lx, np.ones_like(lx)])
    coef, *_ = np.linalg.lstsq(A, ly, rcond=None)
    res = ly - A @ coef
    sxx = float(np.sum((lx - lx.mean()) ** 2))
    stderr = math.sqrt(float(res @ res) / (len(x) - 2) / sxx) if sxx > 0 else float("nan")
    return LogLogFit(float(coef[0]), float(coef[1]), stderr)


def local_slopes(xs, ys, k: int = 5) -> np.ndarray:
    """Slope of the k-point log-log regression starting at each index."""
    lx = np.log(np.asarray(xs, dtype=np.float64))
    ly = np.log(np.asarray(ys, dtype=np.float64))
    n = len(lx) - k + 1
    if n < 1:
        return np.empty(0)
    out = np.empty(n)
    for i in range(n):
        x = lx[i:i + k]
        y = ly[i:i + k]
        xc = x - x.mean()
        out[i] = float(xc @ (y - y.mean()) / (xc @ xc))
    return out


def _thin_log(xs: np.ndarray, per_decade: float) -> np.ndarray:
    """Indices of the points nearest a geometric grid with ``per_decade`` density."""
    lx = np.log10(xs)
    count = max(2, int(math.ceil((lx[-1] - lx[0]) * per_decade)) + 1)
    targets = np.linspace(lx[0], lx[-1], count)
    pos = np.clip(np.searchsorted(lx, targets), 1, len(lx) - 1)
    nearer_left = targets - lx[pos - 1] < lx[pos] - targets
    return np.unique(np.where(nearer_left, pos - 1, pos))


def auto_window(xs, ys, k: int = 5, tol: float = 0.05,
                per_decade: float | None = None) -> tuple[int, int]:
    """Maximal trailing index window whose k-point local slopes span less than ``tol``.

    Points with non-positive x or y are excluded from the start.  With
    ``per_decade`` the local slopes are taken on a log-uniform thinning of
    the data (so each k-point regression covers ``k/per_decade`` decades and
    is not dominated by point-to-point noise); the returned window still
    indexes the original arrays.  Returns ``(start, stop)`` with
    ``stop == len(xs)``.
    """
    xs = np.asarray(xs, dtype=np.float64)
    ys = np.asarray(ys, dtype=np.float64)
    ok = (xs > 0) & (ys > 0)
    first = len(xs)
    while first > 0 and ok[first - 1]:
        first -= 1
    idx = np.arange(first, len(xs))
    if per_decade is not None and len(idx) > 1:
        idx = first + _thin_log(xs[first:], per_decade)
    if len(idx) < k:
        raise ValueError(f"fewer than {k} trailing positive points")
    s = local_slopes(xs[idx], ys[idx], k)
    j = len(s) - 1
    lo = hi = s[j]
    while j > 0:
        lo2, hi2 = min(lo, s[j - 1]), max(hi, s[j - 1])
        if hi2 - lo2 >= tol:
            break
        lo, hi = lo2, hi2
        j -= 1
    return int(idx[j]), len(xs)


@dataclass
class PowerLawFit:
    c_tau: float
    alpha_tau: float
    offset: float
    window: tuple[int, int]
    rms_residual: float
    stderr: float
    fittable: bool = True

    def report(self) -> dict:
        d = asdict(self)
        return {"c_tau": d["c_tau"], "alpha_tau": d["alpha_tau"], "offset": d["offset"],
                "window": list(d["window"]), "residual": d["rms_residual"],
                "stderr": d["stderr"], "fittable": d["fittable"]}


def _profile(lx: np.ndarray, loss: np.ndarray, offsets: np.ndarray):
    """Vectorized log-log line fits of (loss - offset) for each offset."""
    y = np.log(loss[None, :] - offsets[:, None])
    xc = lx - lx.mean()
    sxx = float(xc @ xc)
    slope = (y - y.mean(axis=1, keepdims=True)) @ xc / sxx
    icpt = y.mean(axis=1) - slope * lx.mean()
    res = y - (slope[:, None] * lx[None, :] + icpt[:, None])
    return slope, icpt, np.sqrt(np.mean(res ** 2, axis=1))


_GOLD = (math.sqrt(5.0) - 1.0) / 2.0


def _golden(f, a: float, b: float, iters: int = 80) -> float:
    c = b - _GOLD * (b - a)
    d = a + _GOLD * (b - a)
    fc, fd = f(c), f(d)
    for _ in range(iters):
        if b - a <= 1e-15 * max(1.0, abs(b)):
            break
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - _GOLD * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + _GOLD * (b - a)
            fd = f(d)
    return 0.5 * (a + b)


def _fit_offset(lx: np.ndarray, loss: np.ndarray, grid_points: int):
    top = float(loss.min()) * (1.0 - 1e-6)
    offsets = np.linspace(0.0, top, grid_points)
    _, _, rms = _profile(lx, loss, offsets)
    i = int(np.argmin(rms))
    lo = offsets[max(i - 1, 0)]
    hi = offsets[min(i + 1, grid_points - 1)]

    def f(o: float) -> float:
        return float(_profile(lx, loss, np.array([o]))[2][0])

    best = _golden(f, lo, hi)
    # golden section cannot reach a bracket endpoint; keep it if it is better
    cands = np.array([lo, best, hi])
    slope, icpt, rms = _profile(lx, loss, cands)
    j = int(np.argmin(rms))
    return float(cands[j]), float(slope[j]), float(icpt[j]), float(rms[j])


def fit_power_law_offset(taus, losses, window=None, grid_points: int = 400,
                         bootstrap: int = 200, seed: int = 0) -> PowerLawFit:
    """Fit ``losses = c_tau * taus^(-alpha_tau) + offset`` over ``window``."""
    taus = np.asarray(taus, dtype=np.float64)
    losses = np.asarray(losses, dtype=np.float64)
    sl = _window(len(taus), window)
    t, loss = taus[sl], losses[sl]
    start = sl.start or 0
    win = (start, start + len(t))
    if len(t) < 8:
        raise ValueError(f"need >= 8 points, got {len(t)}")
    if np.any(np.diff(t) <= 0) or t[0] <= 0:
        raise ValueError("taus must be positive and strictly increasing")
    if np.any(loss <= 0) or not np.all(np.isfinite(loss)):
        raise ValueError("losses must be positive and finite")
    lx = np.log(t)
    offset, slope, icpt, rms = _fit_offset(lx, loss, grid_points)
    fittable = slope < 0
    boots = []
    if bootstrap and fittable:
        rng = stream(seed, "bootstrap")
        for _ in range(bootstrap):
            idx = np.sort(rng.integers(0, len(t), len(t)))
            if np.ptp(lx[idx]) == 0:
                continue
            _, bs, _, _ = _fit_offset(lx[idx], loss[idx], 100)
            boots.append(-bs)
    stderr = float(np.std(boots, ddof=1)) if len(boots) > 1 else float("nan")
    return PowerLawFit(float(math.exp(icpt)), float(-slope), float(offset), win,
                       float(rms), stderr, bool(fittable))


def _curve_xy(traj, x_axis: str):
    if isinstance(traj, tuple):
        return np.asarray(traj[0], float), np.asarray(traj[1], float)
    pts = traj.points if hasattr(traj, "points") else traj
    return (np.array([getattr(p, x_axis) for p in pts], dtype=float),
            np.array([p.loss for p in pts], dtype=float))


def collapse_score(trajectories, x_axis: str = "tau", grid_points: int = 64) -> float:
    """Mean over a shared log-x grid of (max/min loss across curves) - 1.

    ``trajectories`` are ``Trajectory`` objects or ``(x, loss)`` pairs.  Only
    points with x > 0 and loss > 0 take part.
    """
    if x_axis not in ("step", "tau"):
        raise ValueError("x_axis must be 'step' or 'tau'")
    curves = []
    for tr in trajectories:
        x, y = _curve_xy(tr, x_axis)
        ok = (x > 0) & (y > 0) & np.isfinite(y)
        if ok.sum() < 2:
            continue
        order = np.argsort(x[ok])
        curves.append((np.log(x[ok][order]), np.log(y[ok][order])))
    if len(curves) < 2:
        raise ValueError("collapse_score needs >= 2 curves with data")
    lo = max(c[0][0] for c in curves)
    hi = min(c[0][-1] for c in curves)
    if not lo < hi:
        raise ValueError("curves have no overlapping x range")
    grid = np.linspace(lo, hi, grid_points)
    logs = np.array([np.interp(grid, cx, cy) for cx, cy in curves])
    return float(np.mean(np.exp(logs.max(axis=0) - logs.min(axis=0))) - 1.0)
