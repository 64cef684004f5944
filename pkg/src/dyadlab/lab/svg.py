"""Tiny SVG writer for ratio-versus-constant scatter plots."""
from __future__ import annotations

import math
from xml.sax.saxutils import escape

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")


def _ticks(lo: float, hi: float, log: bool):
    if log:
        a, b = math.floor(math.log10(lo)), math.ceil(math.log10(hi))
        return [10.0 ** k for k in range(a, b + 1)]
    if hi == lo:
        return [lo]
    step = 10 ** math.floor(math.log10(hi - lo))
    if (hi - lo) / step < 3:
        step /= 2
    start = math.floor(lo / step) * step
    out, v = [], start
    while v <= hi + 1e-12 * step:
        out.append(round(v, 12))
        v += step
    return out


def scatter_svg(series: dict, title: str, xlabel: str, ylabel: str, logx: bool = True,
                width: int = 640, height: int = 420) -> str:
    """series: label -> list of (x, y). Points with non-positive x are dropped on a log axis."""
    pts = [(x, y) for s in series.values() for x, y in s if (x > 0 or not logx) and math.isfinite(y)]
    m = dict(left=70, right=150, top=40, bottom=55)
    pw, ph = width - m["left"] - m["right"], height - m["top"] - m["bottom"]
    if not pts:
        pts = [(1.0, 0.0), (10.0, 1.0)]
    xs, ys = [p[0] for p in pts], [p[1] for p in pts]
    x0, x1 = min(xs), max(xs)
    if logx:
        x0, x1 = 10 ** math.floor(math.log10(x0)), 10 ** math.ceil(math.log10(x1))
        if x1 <= x0:
            x1 = x0 * 10
    elif x1 == x0:
        x1 = x0 + 1
    y0, y1 = min(0.0, min(ys)), max(ys) * 1.1 if max(ys) > 0 else 1.0

    def sx(x):
        t = (math.log10(x) - math.log10(x0)) / (math.log10(x1) - math.log10(x0)) if logx else (x - x0) / (x1 - x0)
        return m["left"] + t * pw

    def sy(y):
        return m["top"] + ph - (y - y0) / (y1 - y0) * ph

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" font-family="sans-serif" font-size="11">',
           f'<rect width="{width}" height="{height}" fill="white"/>',
           f'<text x="{width / 2:.0f}" y="22" text-anchor="middle" font-size="14">{escape(title)}</text>',
           f'<rect x="{m["left"]}" y="{m["top"]}" width="{pw}" height="{ph}" fill="none" stroke="black"/>']
    for t in _ticks(x0, x1, logx):
        if x0 <= t <= x1:
            X = sx(t)
            out.append(f'<line x1="{X:.1f}" y1="{m["top"] + ph}" x2="{X:.1f}" y2="{m["top"] + ph + 5}" stroke="black"/>')
            out.append(f'<text x="{X:.1f}" y="{m["top"] + ph + 18}" text-anchor="middle">{t:g}</text>')
    for t in _ticks(y0, y1, False):
        if y0 <= t <= y1:
            Y = sy(t)
            out.append(f'<line x1="{m["left"] - 5}" y1="{Y:.1f}" x2="{m["left"]}" y2="{Y:.1f}" stroke="black"/>')
            out.append(f'<text x="{m["left"] - 8}" y="{Y + 4:.1f}" text-anchor="end">{t:g}</text>')
    out.append(f'<text x="{m["left"] + pw / 2:.0f}" y="{height - 12}" text-anchor="middle">{escape(xlabel)}</text>')
    out.append(f'<text x="16" y="{m["top"] + ph / 2:.0f}" text-anchor="middle" '
               f'transform="rotate(-90 16 {m["top"] + ph / 2:.0f})">{escape(ylabel)}</text>')
    for k, (label, s) in enumerate(series.items()):
        col = PALETTE[k % len(PALETTE)]
        good = sorted((x, y) for x, y in s if (x > 0 or not logx) and math.isfinite(y))
        if len(good) > 1:
            path = " ".join(f"{'M' if i == 0 else 'L'}{sx(x):.1f},{sy(y):.1f}" for i, (x, y) in enumerate(good))
            out.append(f'<path d="{path}" fill="none" stroke="{col}" stroke-opacity="0.35"/>')
        for x, y in good:
            out.append(f'<circle cx="{sx(x):.1f}" cy="{sy(y):.1f}" r="3" fill="{col}"/>')
        ly = m["top"] + 14 + 16 * k
        out.append(f'<circle cx="{m["left"] + pw + 14}" cy="{ly - 4}" r="3" fill="{col}"/>')
        out.append(f'<text x="{m["left"] + pw + 22}" y="{ly}">{escape(str(label))}</text>')
    out.append("</svg>")
    return "\n".join(out)
