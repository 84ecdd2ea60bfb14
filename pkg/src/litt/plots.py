"""Tiny SVG writer for bar charts (report means with std whiskers) and line charts (epoch traces)."""
from __future__ import annotations

import math
from xml.sax.saxutils import escape

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf", "#7f7f7f")
W, H = 640, 400
PAD_L, PAD_R, PAD_T, PAD_B = 70, 150, 40, 60


def _fmt(v):
    return f"{v:.4g}"


def _ticks(lo, hi, n=5):
    if not (math.isfinite(lo) and math.isfinite(hi)) or hi <= lo:
        hi = lo + 1.0
    step = 10 ** math.floor(math.log10((hi - lo) / n))
    for m in (1, 2, 5, 10):
        if (hi - lo) / (step * m) <= n:
            step *= m
            break
    start = math.floor(lo / step) * step
    out = []
    v = start
    while v <= hi + 1e-9 * step:
        out.append(round(v, 12))
        v += step
    return out


class _Canvas:
    def __init__(self, title, ylabel, xlabel=""):
        self.parts = [
            f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" '
            'font-family="sans-serif" font-size="12">',
            f'<rect width="{W}" height="{H}" fill="white"/>',
            f'<text x="{W / 2:.1f}" y="22" text-anchor="middle" font-size="15">{escape(title)}</text>',
            f'<text x="16" y="{(PAD_T + H - PAD_B) / 2:.1f}" text-anchor="middle" '
            f'transform="rotate(-90 16 {(PAD_T + H - PAD_B) / 2:.1f})">{escape(ylabel)}</text>',
        ]
        if xlabel:
            self.parts.append(f'<text x="{(PAD_L + W - PAD_R) / 2:.1f}" y="{H - 14}" text-anchor="middle">'
                              f'{escape(xlabel)}</text>')

    def y_axis(self, lo, hi):
        self.lo, self.hi = lo, hi
        x0, x1 = PAD_L, W - PAD_R
        for v in _ticks(lo, hi):
            if v < lo or v > hi:
                continue
            y = self.y(v)
            self.parts.append(f'<line x1="{x0}" y1="{y:.1f}" x2="{x1}" y2="{y:.1f}" stroke="#ddd"/>')
            self.parts.append(f'<text x="{x0 - 6}" y="{y + 4:.1f}" text-anchor="end">{_fmt(v)}</text>')
        self.parts.append(f'<line x1="{x0}" y1="{PAD_T}" x2="{x0}" y2="{H - PAD_B}" stroke="black"/>')
        self.parts.append(f'<line x1="{x0}" y1="{H - PAD_B}" x2="{x1}" y2="{H - PAD_B}" stroke="black"/>')

    def y(self, v):
        span = self.hi - self.lo or 1.0
        return H - PAD_B - (v - self.lo) / span * (H - PAD_T - PAD_B)

    def legend(self, names):
        for k, name in enumerate(names):
            y = PAD_T + 10 + 18 * k
            c = PALETTE[k % len(PALETTE)]
            self.parts.append(f'<rect x="{W - PAD_R + 12}" y="{y - 9}" width="12" height="12" fill="{c}"/>')
            self.parts.append(f'<text x="{W - PAD_R + 30}" y="{y + 1}">{escape(name)}</text>')

    def write(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("\n".join(self.parts + ["</svg>"]) + "\n")


def bar_chart_svg(path, labels, means, stds=None, title="", ylabel=""):
    """Vertical bars with optional +-std whiskers."""
    if len(labels) != len(means):
        raise ValueError("labels and means differ in length")
    stds = list(stds) if stds is not None else [0.0] * len(means)
    hi = max([m + s for m, s in zip(means, stds)] + [0.0])
    lo = min([m - s for m, s in zip(means, stds)] + [0.0])
    cv = _Canvas(title, ylabel)
    cv.y_axis(lo, hi * 1.05 if hi > 0 else 1.0)
    n = max(len(labels), 1)
    slot = (W - PAD_R - PAD_L) / n
    for k, (lab, m, s) in enumerate(zip(labels, means, stds)):
        x = PAD_L + k * slot + slot * 0.15
        bw = slot * 0.7
        y0, y1 = cv.y(0.0), cv.y(m)
        cv.parts.append(f'<rect x="{x:.1f}" y="{min(y0, y1):.1f}" width="{bw:.1f}" height="{abs(y0 - y1):.1f}" '
                        f'fill="{PALETTE[k % len(PALETTE)]}"/>')
        if s > 0:
            cx = x + bw / 2
            cv.parts.append(f'<line x1="{cx:.1f}" y1="{cv.y(m - s):.1f}" x2="{cx:.1f}" y2="{cv.y(m + s):.1f}" '
                            'stroke="black"/>')
        cv.parts.append(f'<text x="{x + bw / 2:.1f}" y="{H - PAD_B + 16}" text-anchor="middle">{escape(lab)}</text>')
    cv.write(path)


def line_chart_svg(path, series: dict, title="", ylabel="", xlabel="epoch"):
    """One polyline per named series; x is the 1-based index."""
    vals = [v for ys in series.values() for v in ys if math.isfinite(v)]
    if not vals:
        raise ValueError("no finite values to plot")
    cv = _Canvas(title, ylabel, xlabel)
    lo, hi = min(vals + [0.0]), max(vals)
    cv.y_axis(lo, hi * 1.05 if hi > 0 else 1.0)
    n = max(len(ys) for ys in series.values())
    xs = lambda i: PAD_L + (i / max(n - 1, 1)) * (W - PAD_R - PAD_L)
    for k, (name, ys) in enumerate(series.items()):
        pts = " ".join(f"{xs(i):.1f},{cv.y(v):.1f}" for i, v in enumerate(ys) if math.isfinite(v))
        cv.parts.append(f'<polyline points="{pts}" fill="none" stroke="{PALETTE[k % len(PALETTE)]}" stroke-width="2"/>')
    for v in _ticks(1, n):
        if 1 <= v <= n and float(v).is_integer():
            cv.parts.append(f'<text x="{xs(v - 1):.1f}" y="{H - PAD_B + 16}" text-anchor="middle">{int(v)}</text>')
    cv.legend(list(series))
    cv.write(path)
