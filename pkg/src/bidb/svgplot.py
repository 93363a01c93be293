"""Minimal step-curve charts written as plain SVG text.

Output depends only on the inputs: coordinates are printed with a fixed
number of decimals and series keep their given order, so identical data
always yields identical bytes.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence
from xml.sax.saxutils import escape

WIDTH, HEIGHT = 480, 360
MARGIN = (60, 20, 30, 50)  # left, right, top, bottom
PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")


@dataclass
class Series:
    label: str
    x: Sequence[float]
    y: Sequence[float]


def _fmt(v: float) -> str:
    return f"{v:.2f}"


def step_path(xs, ys, sx, sy) -> str:
    """Path data for a right-continuous step function through the points."""
    pts = [(sx(x), sy(y)) for x, y in zip(xs, ys)]
    if not pts:
        return ""
    d = [f"M{_fmt(pts[0][0])},{_fmt(pts[0][1])}"]
    for px, py in pts[1:]:
        d.append(f"H{_fmt(px)}")
        d.append(f"V{_fmt(py)}")
    return " ".join(d)


def step_chart(series: Sequence[Series], xlabel: str, ylabel: str, title: str = "",
               xlim: tuple[float, float] | None = None, ylim: tuple[float, float] = (0.0, 1.0),
               ticks: int = 5) -> str:
    left, right, top, bottom = MARGIN
    pw, ph = WIDTH - left - right, HEIGHT - top - bottom
    if xlim is None:
        lo = min((min(s.x) for s in series if len(s.x)), default=0.0)
        hi = max((max(s.x) for s in series if len(s.x)), default=1.0)
        xlim = (lo, hi if hi > lo else lo + 1.0)
    x0, x1 = xlim
    y0, y1 = ylim

    def sx(x):
        return left + (min(max(x, x0), x1) - x0) / (x1 - x0) * pw

    def sy(y):
        return top + ph - (min(max(y, y0), y1) - y0) / (y1 - y0) * ph

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
        f'viewBox="0 0 {WIDTH} {HEIGHT}">',
        f'<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="#000"/>',
    ]
    for i in range(ticks + 1):
        xv = x0 + (x1 - x0) * i / ticks
        yv = y0 + (y1 - y0) * i / ticks
        out.append(f'<text class="xtick" x="{_fmt(sx(xv))}" y="{top + ph + 15}" '
                   f'font-size="10" text-anchor="middle">{xv:.3g}</text>')
        out.append(f'<text class="ytick" x="{left - 5}" y="{_fmt(sy(yv) + 3)}" '
                   f'font-size="10" text-anchor="end">{yv:.3g}</text>')
    if title:
        out.append(f'<text class="title" x="{left + pw / 2:.2f}" y="{top - 10}" '
                   f'font-size="12" text-anchor="middle">{escape(title)}</text>')
    out.append(f'<text class="xlabel" x="{left + pw / 2:.2f}" y="{HEIGHT - 10}" '
               f'font-size="12" text-anchor="middle">{escape(xlabel)}</text>')
    out.append(f'<text class="ylabel" x="15" y="{top + ph / 2:.2f}" font-size="12" '
               f'text-anchor="middle" transform="rotate(-90 15 {top + ph / 2:.2f})">'
               f'{escape(ylabel)}</text>')
    for k, s in enumerate(series):
        color = PALETTE[k % len(PALETTE)]
        out.append(f'<path class="step" data-label="{escape(s.label)}" fill="none" '
                   f'stroke="{color}" stroke-width="1.5" d="{step_path(s.x, s.y, sx, sy)}"/>')
        ly = top + 15 + 14 * k
        out.append(f'<text class="legend" x="{left + pw - 5}" y="{ly}" font-size="10" '
                   f'text-anchor="end" fill="{color}">{escape(s.label)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"
