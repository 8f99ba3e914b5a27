"""Deterministic SVG line plots with optional log axes.

Output depends only on the inputs: coordinates are printed with fixed
precision and nothing (timestamps, ids) varies between runs.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from xml.sax.saxutils import escape

import numpy as np

WIDTH, HEIGHT = 800, 600
LEFT, RIGHT, TOP, BOTTOM = 90, 30, 40, 70
PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd",
           "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf")


@dataclass
class Series:
    label: str
    x: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=np.float64).ravel()
        self.y = np.asarray(self.y, dtype=np.float64).ravel()
        if self.x.shape != self.y.shape or self.x.size == 0:
            raise ValueError(f"series {self.label!r}: x and y must be nonempty and equal length")


@dataclass
class AxesSpec:
    logx: bool = False
    logy: bool = False
    xlabel: str = ""
    ylabel: str = ""
    title: str = ""
    # exponent of a reference power-law guide, e.g. -1/3
    slope_guide: float | None = None


@dataclass
class _Axis:
    lo: float
    hi: float
    log: bool
    pix_lo: float
    pix_hi: float

    def t(self, v: float) -> float:
        return math.log10(v) if self.log else v

    def __call__(self, v: float) -> float:
        frac = (self.t(v) - self.lo) / (self.hi - self.lo)
        return self.pix_lo + frac * (self.pix_hi - self.pix_lo)

    def ticks(self) -> list[float]:
        if self.log:
            return [10.0 ** k for k in range(int(self.lo), int(self.hi) + 1)]
        return [float(v) for v in np.linspace(self.lo, self.hi, 6)]


def _range(values: np.ndarray, log: bool) -> tuple[float, float]:
    if log:
        lo = math.floor(math.log10(values.min()))
        hi = math.ceil(math.log10(values.max()))
        if lo == hi:
            hi = lo + 1
        return float(lo), float(hi)
    lo, hi = float(values.min()), float(values.max())
    if lo == hi:
        pad = abs(lo) * 0.5 or 1.0
        return lo - pad, hi + pad
    return lo, hi


def _check_positive(series: list[Series], axis: str) -> None:
    for s in series:
        v = getattr(s, axis)
        bad = np.flatnonzero(~(v > 0))
        if bad.size:
            raise ValueError(f"series {s.label!r} row {int(bad[0])}: {axis}={v[bad[0]]!r} "
                             f"not positive on a log axis")


def _num(v: float) -> str:
    return f"{v:.3f}"


def _tick_label(v: float, log: bool) -> str:
    if log:
        return f"1e{int(round(math.log10(v)))}"
    return f"{v:.4g}"


def guide_endpoints(series: list[Series], slope: float) -> tuple[tuple[float, float], tuple[float, float]]:
    """Reference line through the first point of the first series, spanning all x."""
    xs = np.concatenate([s.x for s in series])
    x0, y0 = series[0].x[0], series[0].y[0]
    xa, xb = float(xs.min()), float(xs.max())
    return (xa, y0 * (xa / x0) ** slope), (xb, y0 * (xb / x0) ** slope)


def render_lines_svg(series: list[Series], axes: AxesSpec | None = None) -> bytes:
    axes = axes or AxesSpec()
    if not series:
        raise ValueError("need at least one series")
    if axes.logx:
        _check_positive(series, "x")
    if axes.logy:
        _check_positive(series, "y")
    xs = np.concatenate([s.x for s in series])
    ys = np.concatenate([s.y for s in series])
    guide = None
    if axes.slope_guide is not None:
        guide = guide_endpoints(series, axes.slope_guide)
        ys = np.concatenate([ys, [guide[0][1], guide[1][1]]])
    if not (np.all(np.isfinite(xs)) and np.all(np.isfinite(ys))):
        raise ValueError("non-finite values cannot be plotted")
    ax = _Axis(*_range(xs, axes.logx), axes.logx, LEFT, WIDTH - RIGHT)
    ay = _Axis(*_range(ys, axes.logy), axes.logy, HEIGHT - BOTTOM, TOP)

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
           f'viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">',
           f'<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>']
    for v in ax.ticks():
        px = _num(ax(v))
        out.append(f'<line class="grid-x" x1="{px}" y1="{TOP}" x2="{px}" y2="{HEIGHT - BOTTOM}" '
                   f'stroke="#dddddd"/>')
        out.append(f'<text x="{px}" y="{HEIGHT - BOTTOM + 18}" text-anchor="middle">'
                   f'{_tick_label(v, ax.log)}</text>')
    for v in ay.ticks():
        py = _num(ay(v))
        out.append(f'<line class="grid-y" x1="{LEFT}" y1="{py}" x2="{WIDTH - RIGHT}" y2="{py}" '
                   f'stroke="#dddddd"/>')
        out.append(f'<text x="{LEFT - 6}" y="{py}" text-anchor="end" dominant-baseline="middle">'
                   f'{_tick_label(v, ay.log)}</text>')
    out.append(f'<rect x="{LEFT}" y="{TOP}" width="{WIDTH - LEFT - RIGHT}" '
               f'height="{HEIGHT - TOP - BOTTOM}" fill="none" stroke="black"/>')
    if axes.title:
        out.append(f'<text x="{WIDTH / 2:.1f}" y="{TOP - 14}" text-anchor="middle" font-size="15">'
                   f'{escape(axes.title)}</text>')
    if axes.xlabel:
        out.append(f'<text x="{(LEFT + WIDTH - RIGHT) / 2:.1f}" y="{HEIGHT - 25}" '
                   f'text-anchor="middle">{escape(axes.xlabel)}</text>')
    if axes.ylabel:
        cy = (TOP + HEIGHT - BOTTOM) / 2
        out.append(f'<text x="20" y="{cy:.1f}" text-anchor="middle" '
                   f'transform="rotate(-90 20 {cy:.1f})">{escape(axes.ylabel)}</text>')
    for i, s in enumerate(series):
        color = PALETTE[i % len(PALETTE)]
        pts = [(ax(float(x)), ay(float(y))) for x, y in zip(s.x, s.y)]
        if len(pts) == 1:
            out.append(f'<circle class="marker" cx="{_num(pts[0][0])}" cy="{_num(pts[0][1])}" '
                       f'r="4" fill="{color}"/>')
        else:
            coords = " ".join(f"{_num(px)},{_num(py)}" for px, py in pts)
            out.append(f'<polyline class="series" points="{coords}" fill="none" '
                       f'stroke="{color}" stroke-width="1.5"/>')
        ly = TOP + 18 + 18 * i
        out.append(f'<line x1="{WIDTH - RIGHT - 170}" y1="{ly}" x2="{WIDTH - RIGHT - 145}" y2="{ly}" '
                   f'stroke="{color}" stroke-width="2"/>')
        out.append(f'<text class="legend" x="{WIDTH - RIGHT - 140}" y="{ly}" '
                   f'dominant-baseline="middle">{escape(s.label)}</text>')
    if guide is not None:
        (xa, ya), (xb, yb) = guide
        out.append(f'<line class="guide" x1="{_num(ax(xa))}" y1="{_num(ay(ya))}" '
                   f'x2="{_num(ax(xb))}" y2="{_num(ay(yb))}" stroke="black" '
                   f'stroke-dasharray="6,4"/>')
        out.append(f'<text x="{_num(ax(xb) - 4)}" y="{_num(ay(yb) - 8)}" text-anchor="end">'
                   f'slope {axes.slope_guide:.4g}</text>')
    out.append("</svg>\n")
    return "\n".join(out).encode("utf-8")
