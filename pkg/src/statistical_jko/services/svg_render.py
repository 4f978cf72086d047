"""
Self-contained SVG figures with fixed styling.

Two chart types: line plots for density comparisons and slices, and heatmaps
for space-time fields. Output depends only on the data, so reruns are
byte-identical.
"""

from typing import List, Sequence, Tuple
from xml.sax.saxutils import escape

import numpy as np

WIDTH = 640
HEIGHT = 420
MARGIN = 56
PALETTE = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"]

Series = Tuple[str, Sequence[float], Sequence[float]]


def _fmt(v: float) -> str:
    return format(float(v), ".6g")


def _range(values: np.ndarray) -> Tuple[float, float]:
    lo, hi = float(np.min(values)), float(np.max(values))
    if hi == lo:
        pad = 1.0 if lo == 0.0 else abs(lo) * 0.1
        return lo - pad, hi + pad
    return lo, hi


def _header(title: str) -> List[str]:
    return [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
        f'viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">',
        f'<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
        f'<text x="{WIDTH / 2}" y="{MARGIN / 2}" text-anchor="middle" font-size="14">{escape(title)}</text>',
    ]


def _axes(x_range, y_range, xlabel: str, ylabel: str) -> List[str]:
    left, right, top, bottom = MARGIN, WIDTH - MARGIN, MARGIN, HEIGHT - MARGIN
    parts = [
        f'<line x1="{left}" y1="{bottom}" x2="{right}" y2="{bottom}" stroke="black"/>',
        f'<line x1="{left}" y1="{top}" x2="{left}" y2="{bottom}" stroke="black"/>',
        f'<text x="{left}" y="{bottom + 16}" text-anchor="middle">{_fmt(x_range[0])}</text>',
        f'<text x="{right}" y="{bottom + 16}" text-anchor="middle">{_fmt(x_range[1])}</text>',
        f'<text x="{left - 6}" y="{bottom}" text-anchor="end">{_fmt(y_range[0])}</text>',
        f'<text x="{left - 6}" y="{top + 4}" text-anchor="end">{_fmt(y_range[1])}</text>',
        f'<text x="{WIDTH / 2}" y="{HEIGHT - 12}" text-anchor="middle">{escape(xlabel)}</text>',
        f'<text x="14" y="{HEIGHT / 2}" text-anchor="middle" '
        f'transform="rotate(-90 14 {HEIGHT / 2})">{escape(ylabel)}</text>',
    ]
    return parts


def _project(v: np.ndarray, lo: float, hi: float, a: float, b: float) -> np.ndarray:
    return a + (v - lo) / (hi - lo) * (b - a)


def line_plot(series: Sequence[Series], title: str = "", xlabel: str = "x", ylabel: str = "") -> str:
    """Overlaid polylines with a legend."""
    if not series:
        raise ValueError("line plot needs at least one series")
    xs = np.concatenate([np.asarray(s[1], dtype=float) for s in series])
    ys = np.concatenate([np.asarray(s[2], dtype=float) for s in series])
    x_range, y_range = _range(xs), _range(ys)
    parts = _header(title) + _axes(x_range, y_range, xlabel, ylabel)
    for k, (label, x, y) in enumerate(series):
        px = _project(np.asarray(x, dtype=float), *x_range, MARGIN, WIDTH - MARGIN)
        py = _project(np.asarray(y, dtype=float), *y_range, HEIGHT - MARGIN, MARGIN)
        points = " ".join(f"{_fmt(a)},{_fmt(b)}" for a, b in zip(px, py))
        color = PALETTE[k % len(PALETTE)]
        dash = ' stroke-dasharray="6 4"' if k % 2 else ""
        parts.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5"{dash} points="{points}"/>')
        ly = MARGIN + 16 * (k + 1)
        parts.append(
            f'<line x1="{WIDTH - MARGIN - 120}" y1="{ly - 4}" x2="{WIDTH - MARGIN - 100}" y2="{ly - 4}" '
            f'stroke="{color}" stroke-width="1.5"{dash}/>'
        )
        parts.append(f'<text x="{WIDTH - MARGIN - 94}" y="{ly}">{escape(label)}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def _diverging(value: float, bound: float) -> str:
    """Blue-white-red color for value in [-bound, bound]."""
    s = 0.0 if bound == 0 else max(-1.0, min(1.0, value / bound))
    if s >= 0:
        r, g, b = 255, int(round(255 * (1 - s))), int(round(255 * (1 - s)))
    else:
        r, g, b = int(round(255 * (1 + s))), int(round(255 * (1 + s))), 255
    return f"#{r:02x}{g:02x}{b:02x}"


def heatmap(
    values: np.ndarray,
    t: Sequence[float],
    x: Sequence[float],
    title: str = "",
    max_cells: int = 120,
) -> str:
    """
    Space-time field as colored cells, time on the vertical axis.

    The field is subsampled to at most max_cells per axis.
    """
    values = np.asarray(values, dtype=float)
    t = np.asarray(t, dtype=float)
    x = np.asarray(x, dtype=float)
    rows = np.unique(np.linspace(0, t.size - 1, min(t.size, max_cells)).round().astype(int))
    cols = np.unique(np.linspace(0, x.size - 1, min(x.size, max_cells)).round().astype(int))
    sub = values[np.ix_(rows, cols)]
    bound = float(np.max(np.abs(sub))) if sub.size else 0.0
    x_range, t_range = _range(x), _range(t)
    parts = _header(title) + _axes(x_range, t_range, "x", "t")
    cw = (WIDTH - 2 * MARGIN) / len(cols)
    ch = (HEIGHT - 2 * MARGIN) / len(rows)
    for a, i in enumerate(rows):
        y0 = HEIGHT - MARGIN - (a + 1) * ch
        for b, j in enumerate(cols):
            x0 = MARGIN + b * cw
            parts.append(
                f'<rect x="{_fmt(x0)}" y="{_fmt(y0)}" width="{_fmt(cw)}" height="{_fmt(ch)}" '
                f'fill="{_diverging(values[i, j], bound)}"/>'
            )
    parts.append(f'<text x="{WIDTH - MARGIN}" y="{MARGIN - 8}" text-anchor="end">|V| max {_fmt(bound)}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"
