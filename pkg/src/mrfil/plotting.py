"""Minimal SVG learning curves: polylines over a log-scaled interaction axis."""

from __future__ import annotations

import math
from xml.sax.saxutils import escape

COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b")


def learning_curve_svg(series: dict[str, list[tuple[float, float, float]]], title: str = "",
                       width: int = 640, height: int = 400) -> str:
    """``series`` maps a label to ``(env_steps, mean, std)`` points.

    The x axis is log10 of interactions (steps below 1 are drawn at 1). A
    series with a single point is drawn as a dashed horizontal line.
    """
    left, right, top, bottom = 60, 150, 30, 50
    pw, ph = width - left - right, height - top - bottom
    xs = [max(p[0], 1.0) for pts in series.values() for p in pts] or [1.0, 10.0]
    ys = [v for pts in series.values() for p in pts for v in (p[1] - p[2], p[1] + p[2])] or [0.0, 1.0]
    x_lo, x_hi = math.floor(math.log10(min(xs))), math.ceil(math.log10(max(xs)))
    if x_hi <= x_lo:
        x_hi = x_lo + 1
    y_lo, y_hi = min(0.0, min(ys)), max(ys)
    if y_hi <= y_lo:
        y_hi = y_lo + 1.0

    def px(x):
        return left + pw * (math.log10(max(x, 1.0)) - x_lo) / (x_hi - x_lo)

    def py(y):
        return top + ph * (1.0 - (y - y_lo) / (y_hi - y_lo))

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
           f'font-family="sans-serif" font-size="11">',
           f'<rect width="{width}" height="{height}" fill="white"/>',
           f'<text x="{left}" y="18" font-size="13">{escape(title)}</text>',
           f'<line x1="{left}" y1="{top + ph}" x2="{left + pw}" y2="{top + ph}" stroke="black"/>',
           f'<line x1="{left}" y1="{top}" x2="{left}" y2="{top + ph}" stroke="black"/>']
    for e in range(x_lo, x_hi + 1):
        x = left + pw * (e - x_lo) / (x_hi - x_lo)
        out.append(f'<line x1="{x:.1f}" y1="{top + ph}" x2="{x:.1f}" y2="{top + ph + 4}" stroke="black"/>')
        out.append(f'<text x="{x:.1f}" y="{top + ph + 16}" text-anchor="middle">1e{e}</text>')
    for i in range(5):
        y = y_lo + (y_hi - y_lo) * i / 4
        out.append(f'<text x="{left - 6}" y="{py(y) + 4:.1f}" text-anchor="end">{y:.2f}</text>')
    out.append(f'<text x="{left + pw / 2}" y="{height - 12}" text-anchor="middle">'
               f'environment interactions (log scale)</text>')
    out.append(f'<text x="14" y="{top + ph / 2}" transform="rotate(-90 14 {top + ph / 2})" '
               f'text-anchor="middle">task return</text>')
    for k, (label, pts) in enumerate(sorted(series.items())):
        color = COLORS[k % len(COLORS)]
        pts = sorted(pts)
        if len(pts) == 1:
            y = py(pts[0][1])
            out.append(f'<line x1="{left}" y1="{y:.1f}" x2="{left + pw}" y2="{y:.1f}" stroke="{color}" '
                       f'stroke-dasharray="6,4"/>')
        else:
            band = [(px(x), py(m + s)) for x, m, s in pts] + [(px(x), py(m - s)) for x, m, s in reversed(pts)]
            out.append('<polygon points="' + " ".join(f"{a:.1f},{b:.1f}" for a, b in band)
                       + f'" fill="{color}" fill-opacity="0.15" stroke="none"/>')
            out.append('<polyline points="' + " ".join(f"{px(x):.1f},{py(m):.1f}" for x, m, _ in pts)
                       + f'" fill="none" stroke="{color}" stroke-width="1.5"/>')
        ly = top + 14 * k + 8
        out.append(f'<line x1="{left + pw + 10}" y1="{ly}" x2="{left + pw + 30}" y2="{ly}" stroke="{color}" '
                   f'stroke-width="2"/>')
        out.append(f'<text x="{left + pw + 35}" y="{ly + 4}">{escape(label)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"
