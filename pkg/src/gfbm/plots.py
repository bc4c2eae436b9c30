"""Minimal self-contained SVG line charts (no plotting dependency)."""

import math
from xml.sax.saxutils import escape

__all__ = ["line_chart"]

_COLORS = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf"]
W, H = 640, 420
ML, MR, MT, MB = 70, 20, 40, 55


def _ticks(lo, hi, n=5):
    if hi <= lo:
        hi = lo + 1.0
    span = hi - lo
    step = 10 ** math.floor(math.log10(span / n))
    for m in (1, 2, 5, 10):
        if span / (step * m) <= n:
            step *= m
            break
    first = math.ceil(lo / step) * step
    out = []
    v = first
    while v <= hi + 1e-12 * span:
        out.append(v)
        v += step
    return out


def line_chart(series, xlabel, ylabel, title="", logx=False, logy=False, step=False,
               markers=True, metadata=None):
    """Render ``series`` (list of ``(label, xs, ys)``) to an SVG string.

    Non-finite or non-positive (on log axes) points are dropped.  ``step``
    draws post-step lines.  ``metadata`` entries go into a <metadata> block.
    """
    tx = (lambda v: math.log10(v)) if logx else (lambda v: v)
    ty = (lambda v: math.log10(v)) if logy else (lambda v: v)
    clean = []
    for label, xs, ys in series:
        pts = []
        for x, y in zip(xs, ys):
            x, y = float(x), float(y)
            if not (math.isfinite(x) and math.isfinite(y)):
                continue
            if (logx and x <= 0) or (logy and y <= 0):
                continue
            pts.append((tx(x), ty(y)))
        clean.append((label, pts))
    allp = [p for _, pts in clean for p in pts]
    if not allp:
        raise ValueError("nothing to plot")
    x0, x1 = min(p[0] for p in allp), max(p[0] for p in allp)
    y0, y1 = min(p[1] for p in allp), max(p[1] for p in allp)
    if x1 == x0:
        x0, x1 = x0 - 0.5, x1 + 0.5
    if y1 == y0:
        y0, y1 = y0 - 0.5, y1 + 0.5
    pad = 0.04 * (y1 - y0)
    y0, y1 = y0 - pad, y1 + pad
    pw, ph = W - ML - MR, H - MT - MB
    sx = lambda v: ML + (v - x0) / (x1 - x0) * pw
    sy = lambda v: MT + ph - (v - y0) / (y1 - y0) * ph

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" '
           f'viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">']
    if metadata:
        out.append("<metadata>")
        for k in sorted(metadata):
            out.append(f'<entry key="{escape(str(k))}">{escape(str(metadata[k]))}</entry>')
        out.append("</metadata>")
    out.append(f'<rect x="0" y="0" width="{W}" height="{H}" fill="white"/>')
    if title:
        out.append(f'<text x="{W / 2}" y="22" text-anchor="middle" font-size="14">{escape(title)}</text>')
    out.append(f'<rect x="{ML}" y="{MT}" width="{pw}" height="{ph}" fill="none" stroke="black"/>')
    fmt = lambda v, lg: (f"1e{v:g}" if lg else f"{v:.4g}")
    for v in _ticks(x0, x1):
        X = sx(v)
        out.append(f'<line x1="{X:.2f}" y1="{MT + ph}" x2="{X:.2f}" y2="{MT + ph + 5}" stroke="black"/>')
        out.append(f'<text x="{X:.2f}" y="{MT + ph + 18}" text-anchor="middle">{fmt(v, logx)}</text>')
    for v in _ticks(y0, y1):
        Y = sy(v)
        out.append(f'<line x1="{ML - 5}" y1="{Y:.2f}" x2="{ML}" y2="{Y:.2f}" stroke="black"/>')
        out.append(f'<text x="{ML - 8}" y="{Y + 4:.2f}" text-anchor="end">{fmt(v, logy)}</text>')
    out.append(f'<text x="{ML + pw / 2}" y="{H - 12}" text-anchor="middle">{escape(xlabel)}</text>')
    out.append(f'<text x="16" y="{MT + ph / 2}" text-anchor="middle" '
               f'transform="rotate(-90 16 {MT + ph / 2})">{escape(ylabel)}</text>')
    for i, (label, pts) in enumerate(clean):
        if not pts:
            continue
        c = _COLORS[i % len(_COLORS)]
        coords = []
        for j, (x, y) in enumerate(pts):
            if step and j:
                coords.append(f"{sx(x):.2f},{sy(pts[j - 1][1]):.2f}")
            coords.append(f"{sx(x):.2f},{sy(y):.2f}")
        out.append(f'<polyline fill="none" stroke="{c}" stroke-width="1.5" points="{" ".join(coords)}"/>')
        if markers and len(pts) <= 60:
            for x, y in pts:
                out.append(f'<circle cx="{sx(x):.2f}" cy="{sy(y):.2f}" r="2.5" fill="{c}"/>')
        ly = MT + 14 + 16 * i
        out.append(f'<line x1="{ML + pw - 120}" y1="{ly - 4}" x2="{ML + pw - 100}" y2="{ly - 4}" stroke="{c}" stroke-width="2"/>')
        out.append(f'<text x="{ML + pw - 95}" y="{ly}">{escape(str(label))}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"
