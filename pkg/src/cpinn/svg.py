"""Minimal self-contained SVG plots (no plotting dependency)."""

from __future__ import annotations

import math
from xml.sax.saxutils import escape

import numpy as np

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b")
W, H, PAD = 640, 420, 56


def _fmt(v):
    return f"{v:.2f}"


class _Axes:
    def __init__(self, xlim, ylim):
        self.x0, self.x1 = xlim
        self.y0, self.y1 = ylim
        if self.x1 == self.x0:
            self.x1 = self.x0 + 1.0
        if self.y1 == self.y0:
            self.y1 = self.y0 + 1.0

    def px(self, x):
        return PAD + (np.asarray(x) - self.x0) / (self.x1 - self.x0) * (W - 2 * PAD)

    def py(self, y):
        return H - PAD - (np.asarray(y) - self.y0) / (self.y1 - self.y0) * (H - 2 * PAD)


def _frame(ax, title, xlabel, ylabel):
    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">',
        f'<rect width="{W}" height="{H}" fill="white"/>',
        f'<rect x="{PAD}" y="{PAD}" width="{W - 2 * PAD}" height="{H - 2 * PAD}" fill="none" stroke="#333"/>',
        f'<text x="{W / 2}" y="{PAD / 2}" text-anchor="middle" font-family="sans-serif" font-size="15">{escape(title)}</text>',
        f'<text x="{W / 2}" y="{H - 12}" text-anchor="middle" font-family="sans-serif" font-size="12">{escape(xlabel)}</text>',
        f'<text x="14" y="{H / 2}" text-anchor="middle" font-family="sans-serif" font-size="12" '
        f'transform="rotate(-90 14 {H / 2})">{escape(ylabel)}</text>',
    ]
    for t in np.linspace(ax.x0, ax.x1, 5):
        x = ax.px(t)
        out.append(f'<text x="{_fmt(x)}" y="{H - PAD + 16}" text-anchor="middle" font-family="sans-serif" font-size="10">{t:.3g}</text>')
    for t in np.linspace(ax.y0, ax.y1, 5):
        y = ax.py(t)
        out.append(f'<text x="{PAD - 6}" y="{_fmt(y + 3)}" text-anchor="end" font-family="sans-serif" font-size="10">{t:.3g}</text>')
    return out


def _polyline(ax, x, y, color, width=1.5, dash=None):
    pts = " ".join(f"{_fmt(a)},{_fmt(b)}" for a, b in zip(ax.px(x), ax.py(y)))
    d = f' stroke-dasharray="{dash}"' if dash else ""
    return f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="{width}"{d}/>'


def _legend(labels, colors):
    out = []
    for i, (lab, col) in enumerate(zip(labels, colors)):
        y = PAD + 14 + 16 * i
        out.append(f'<line x1="{PAD + 10}" y1="{y}" x2="{PAD + 30}" y2="{y}" stroke="{col}" stroke-width="3"/>')
        out.append(f'<text x="{PAD + 36}" y="{y + 4}" font-family="sans-serif" font-size="11">{escape(lab)}</text>')
    return out


def coverage_plot(grid, curves: dict, title="Coverage") -> str:
    """Empirical vs expected coverage, one line per entry of ``curves``, with the diagonal."""
    expected = 1.0 - np.asarray(grid, dtype=float)
    order = np.argsort(expected)
    ax = _Axes((0.0, 1.0), (0.0, 1.0))
    out = _frame(ax, title, "expected coverage", "empirical coverage")
    out.append(_polyline(ax, [0, 1], [0, 1], "#777", 1.0, "5,4"))
    colors = []
    for i, (name, cov) in enumerate(curves.items()):
        col = PALETTE[i % len(PALETTE)]
        colors.append(col)
        out.append(_polyline(ax, expected[order], np.asarray(cov)[order], col, 2.0))
    out += _legend(list(curves), colors)
    out.append("</svg>")
    return "\n".join(out) + "\n"


def interval_plot(x, truth, bands: dict, points=None, title="Prediction intervals") -> str:
    """1D bands: ``bands[name] = (center, lower, upper)``; ``points`` optional ``(x, u)`` scatter."""
    x = np.asarray(x, dtype=float)
    vals = [np.asarray(truth)]
    for c, lo, hi in bands.values():
        vals += [np.asarray(lo)[np.isfinite(lo)], np.asarray(hi)[np.isfinite(hi)]]
    if points is not None:
        vals.append(np.asarray(points[1]))
    allv = np.concatenate([v.ravel() for v in vals if np.size(v)])
    lo_y, hi_y = float(allv.min()), float(allv.max())
    span = hi_y - lo_y or 1.0
    ax = _Axes((float(x.min()), float(x.max())), (lo_y - 0.05 * span, hi_y + 0.05 * span))
    out = _frame(ax, title, "x", "u")
    colors = []
    for i, (name, (c, lo, hi)) in enumerate(bands.items()):
        col = PALETTE[i % len(PALETTE)]
        colors.append(col)
        lo = np.clip(lo, ax.y0, ax.y1)
        hi = np.clip(hi, ax.y0, ax.y1)
        top = " ".join(f"{_fmt(a)},{_fmt(b)}" for a, b in zip(ax.px(x), ax.py(hi)))
        bot = " ".join(f"{_fmt(a)},{_fmt(b)}" for a, b in zip(ax.px(x[::-1]), ax.py(lo[::-1])))
        out.append(f'<polygon points="{top} {bot}" fill="{col}" fill-opacity="0.18" stroke="none"/>')
        out.append(_polyline(ax, x, c, col, 1.5))
    out.append(_polyline(ax, x, truth, "#000", 1.2, "4,3"))
    if points is not None:
        for a, b in zip(ax.px(points[0]), ax.py(points[1])):
            out.append(f'<circle cx="{_fmt(a)}" cy="{_fmt(b)}" r="1.8" fill="#444"/>')
    out += _legend(list(bands) + ["exact"], colors + ["#000"])
    out.append("</svg>")
    return "\n".join(out) + "\n"


def _color(t):
    # white -> dark blue ramp
    t = 0.0 if not math.isfinite(t) else min(max(t, 0.0), 1.0)
    r = int(255 - 225 * t)
    g = int(255 - 180 * t)
    b = int(255 - 80 * t)
    return f"#{r:02x}{g:02x}{b:02x}"


def heatmap(xs, ys, values, title="Interval width") -> str:
    """Heatmap of ``values[i, j]`` at ``(xs[i], ys[j])``."""
    xs, ys = np.asarray(xs, float), np.asarray(ys, float)
    V = np.asarray(values, float)
    finite = V[np.isfinite(V)]
    vmin, vmax = (float(finite.min()), float(finite.max())) if finite.size else (0.0, 1.0)
    ax = _Axes((float(xs.min()), float(xs.max())), (float(ys.min()), float(ys.max())))
    out = _frame(ax, f"{title} [{vmin:.3g}, {vmax:.3g}]", "x1", "x2")
    dx = (W - 2 * PAD) / len(xs)
    dy = (H - 2 * PAD) / len(ys)
    for i in range(len(xs)):
        for j in range(len(ys)):
            t = (V[i, j] - vmin) / (vmax - vmin) if vmax > vmin else 0.5
            x = PAD + i * dx
            y = H - PAD - (j + 1) * dy
            out.append(f'<rect x="{_fmt(x)}" y="{_fmt(y)}" width="{_fmt(dx + 0.5)}" height="{_fmt(dy + 0.5)}" fill="{_color(t)}"/>')
    out.append("</svg>")
    return "\n".join(out) + "\n"
