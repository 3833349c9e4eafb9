"""Tiny self-contained SVG line plots (no external assets, no dependencies)."""

from __future__ import annotations

import math

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")

WIDTH, HEIGHT = 720, 460
MARGIN_L, MARGIN_R, MARGIN_T, MARGIN_B = 70, 30, 44, 56


def _ticks(lo: float, hi: float, n: int = 5):
    if hi <= lo:
        hi = lo + 1.0
    raw = (hi - lo) / n
    mag = 10 ** math.floor(math.log10(raw))
    for mult in (1, 2, 2.5, 5, 10):
        if raw <= mult * mag:
            step = mult * mag
            break
    start = math.ceil(lo / step) * step
    ticks = []
    t = start
    while t <= hi + 1e-12 * abs(hi):
        ticks.append(round(t, 12))
        t += step
    return ticks


def _fmt(v: float) -> str:
    return f"{v:g}"


def line_plot(path: str, series, title: str, xlabel: str, ylabel: str,
              markers: bool = False) -> None:
    """series: list of (label, xs, ys). Non-finite points are skipped."""
    clean = []
    for label, xs, ys in series:
        pts = [(x, y) for x, y in zip(xs, ys)
               if math.isfinite(x) and math.isfinite(y)]
        clean.append((label, pts))
    all_pts = [p for _, pts in clean for p in pts]
    if all_pts:
        xlo = min(p[0] for p in all_pts)
        xhi = max(p[0] for p in all_pts)
        ylo = min(p[1] for p in all_pts)
        yhi = max(p[1] for p in all_pts)
    else:
        xlo, xhi, ylo, yhi = 0.0, 1.0, 0.0, 1.0
    if xhi == xlo:
        xhi = xlo + 1.0
    if yhi == ylo:
        yhi = ylo + max(abs(ylo), 1.0) * 0.1
    pad = 0.04 * (yhi - ylo)
    ylo, yhi = ylo - pad, yhi + pad

    px_w = WIDTH - MARGIN_L - MARGIN_R
    px_h = HEIGHT - MARGIN_T - MARGIN_B

    def sx(x):
        return MARGIN_L + (x - xlo) / (xhi - xlo) * px_w

    def sy(y):
        return HEIGHT - MARGIN_B - (y - ylo) / (yhi - ylo) * px_h

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
        f'viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">',
        f'<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
        f'<text x="{WIDTH / 2}" y="24" text-anchor="middle" font-size="15">{title}</text>',
    ]
    # axes
    x0, y0 = MARGIN_L, HEIGHT - MARGIN_B
    parts.append(f'<line x1="{x0}" y1="{y0}" x2="{WIDTH - MARGIN_R}" y2="{y0}" stroke="black"/>')
    parts.append(f'<line x1="{x0}" y1="{y0}" x2="{x0}" y2="{MARGIN_T}" stroke="black"/>')
    for t in _ticks(xlo, xhi):
        if t < xlo or t > xhi:
            continue
        parts.append(f'<line x1="{sx(t):.1f}" y1="{y0}" x2="{sx(t):.1f}" y2="{y0 + 5}" stroke="black"/>')
        parts.append(f'<text x="{sx(t):.1f}" y="{y0 + 18}" text-anchor="middle">{_fmt(t)}</text>')
    for t in _ticks(ylo, yhi):
        if t < ylo or t > yhi:
            continue
        parts.append(f'<line x1="{x0 - 5}" y1="{sy(t):.1f}" x2="{x0}" y2="{sy(t):.1f}" stroke="black"/>')
        parts.append(f'<text x="{x0 - 8}" y="{sy(t) + 4:.1f}" text-anchor="end">{_fmt(t)}</text>')
        parts.append(f'<line x1="{x0}" y1="{sy(t):.1f}" x2="{WIDTH - MARGIN_R}" y2="{sy(t):.1f}" '
                     f'stroke="#dddddd" stroke-width="0.5"/>')
    parts.append(f'<text x="{MARGIN_L + px_w / 2}" y="{HEIGHT - 14}" text-anchor="middle">{xlabel}</text>')
    parts.append(f'<text x="20" y="{MARGIN_T + px_h / 2}" text-anchor="middle" '
                 f'transform="rotate(-90 20 {MARGIN_T + px_h / 2})">{ylabel}</text>')
    # series
    for i, (label, pts) in enumerate(clean):
        color = PALETTE[i % len(PALETTE)]
        if pts:
            coords = " ".join(f"{sx(x):.1f},{sy(y):.1f}" for x, y in pts)
            parts.append(f'<polyline points="{coords}" fill="none" stroke="{color}" stroke-width="1.6"/>')
            if markers or len(pts) <= 30:
                for x, y in pts:
                    parts.append(f'<circle cx="{sx(x):.1f}" cy="{sy(y):.1f}" r="2.6" fill="{color}"/>')
        ly = MARGIN_T + 16 * i
        parts.append(f'<line x1="{WIDTH - MARGIN_R - 130}" y1="{ly}" '
                     f'x2="{WIDTH - MARGIN_R - 110}" y2="{ly}" stroke="{color}" stroke-width="2"/>')
        parts.append(f'<text x="{WIDTH - MARGIN_R - 104}" y="{ly + 4}">{label}</text>')
    parts.append("</svg>")
    with open(path, "w") as f:
        f.write("\n".join(parts))
