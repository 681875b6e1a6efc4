"""Minimal deterministic SVG line plots (polylines, axes, shaded bands)."""

from __future__ import annotations

import math

import numpy as np

WIDTH, HEIGHT = 640, 400
MARGIN = (60, 20, 20, 50)  # left, right, top, bottom
COLORS = ("#c0392b", "#2c6fbb", "#27ae60", "#8e44ad", "#d35400", "#7f8c8d")


def _fmt(v):
    return f"{v:.2f}"


def _ticks(lo, hi, n=5):
    if hi <= lo:
        return [lo]
    raw = (hi - lo) / n
    mag = 10 ** math.floor(math.log10(raw))
    step = min((m * mag for m in (1, 2, 5, 10) if m * mag >= raw), default=raw)
    start = math.ceil(lo / step) * step
    out = []
    t = start
    while t <= hi + 1e-9 * step:
        out.append(round(t, 12))
        t += step
    return out


class Plot:
    def __init__(self, title="", xlabel="", ylabel="", xlim=None, ylim=None):
        self.title, self.xlabel, self.ylabel = title, xlabel, ylabel
        self.xlim, self.ylim = xlim, ylim
        self.items = []

    def line(self, x, y, label=None, color=None, dashed=False):
        self.items.append(("line", np.asarray(x, float), np.asarray(y, float), label, color, dashed))
        return self

    def band(self, x, lo, hi, color=None):
        self.items.append(("band", np.asarray(x, float), (np.asarray(lo, float), np.asarray(hi, float)), None, color, False))
        return self

    def _limits(self):
        xs, ys = [], []
        for kind, x, y, *_ in self.items:
            xs.append(x[np.isfinite(x)])
            if kind == "band":
                ys.extend(v[np.isfinite(v)] for v in y)
            else:
                ys.append(y[np.isfinite(y)])
        xs = np.concatenate(xs) if xs else np.array([0.0, 1.0])
        ys = np.concatenate(ys) if ys else np.array([0.0, 1.0])
        xlim = self.xlim or (float(xs.min()), float(xs.max()))
        ylim = self.ylim or (float(ys.min()), float(ys.max()))
        if ylim[1] == ylim[0]:
            ylim = (ylim[0] - 1.0, ylim[1] + 1.0)
        if xlim[1] == xlim[0]:
            xlim = (xlim[0] - 1.0, xlim[1] + 1.0)
        return xlim, ylim

    def render(self) -> str:
        (x0, x1), (y0, y1) = self._limits()
        left, right, top, bottom = MARGIN
        pw, ph = WIDTH - left - right, HEIGHT - top - bottom

        def sx(v):
            return left + (v - x0) / (x1 - x0) * pw

        def sy(v):
            return top + (1.0 - (v - y0) / (y1 - y0)) * ph

        out = [
            f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">',
            f'<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
            f'<clipPath id="plotarea"><rect x="{left}" y="{top}" width="{pw}" height="{ph}"/></clipPath>',
        ]
        for t in _ticks(x0, x1):
            out.append(f'<line x1="{_fmt(sx(t))}" y1="{top + ph}" x2="{_fmt(sx(t))}" y2="{top + ph + 5}" stroke="black"/>')
            out.append(f'<text x="{_fmt(sx(t))}" y="{top + ph + 18}" font-size="11" text-anchor="middle">{t:g}</text>')
        for t in _ticks(y0, y1):
            out.append(f'<line x1="{left - 5}" y1="{_fmt(sy(t))}" x2="{left}" y2="{_fmt(sy(t))}" stroke="black"/>')
            out.append(f'<text x="{left - 8}" y="{_fmt(sy(t) + 4)}" font-size="11" text-anchor="end">{t:g}</text>')
        out.append(f'<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="black"/>')

        legend = []
        for i, (kind, x, y, label, color, dashed) in enumerate(self.items):
            color = color or COLORS[i % len(COLORS)]
            if kind == "band":
                lo, hi = y
                good = np.isfinite(x) & np.isfinite(lo) & np.isfinite(hi)
                for seg in _segments(good):
                    pts = [(sx(x[j]), sy(hi[j])) for j in seg] + [(sx(x[j]), sy(lo[j])) for j in reversed(seg)]
                    out.append(
                        '<polygon clip-path="url(#plotarea)" fill="' + color + '" fill-opacity="0.25" stroke="none" points="'
                        + " ".join(f"{_fmt(a)},{_fmt(b)}" for a, b in pts) + '"/>'
                    )
                continue
            good = np.isfinite(x) & np.isfinite(y)
            dash = ' stroke-dasharray="6,4"' if dashed else ""
            for seg in _segments(good):
                pts = " ".join(f"{_fmt(sx(x[j]))},{_fmt(sy(y[j]))}" for j in seg)
                out.append(f'<polyline clip-path="url(#plotarea)" fill="none" stroke="{color}" stroke-width="1.6"{dash} points="{pts}"/>')
            if label:
                legend.append((label, color, dash))
        for i, (label, color, dash) in enumerate(legend):
            yy = top + 14 + 16 * i
            out.append(f'<line x1="{left + 10}" y1="{yy}" x2="{left + 34}" y2="{yy}" stroke="{color}" stroke-width="1.6"{dash}/>')
            out.append(f'<text x="{left + 40}" y="{yy + 4}" font-size="12">{_esc(label)}</text>')
        if self.title:
            out.append(f'<text x="{left + pw / 2:.2f}" y="14" font-size="13" text-anchor="middle">{_esc(self.title)}</text>')
        if self.xlabel:
            out.append(f'<text x="{left + pw / 2:.2f}" y="{HEIGHT - 10}" font-size="12" text-anchor="middle">{_esc(self.xlabel)}</text>')
        if self.ylabel:
            out.append(
                f'<text x="14" y="{top + ph / 2:.2f}" font-size="12" text-anchor="middle" '
                f'transform="rotate(-90 14 {top + ph / 2:.2f})">{_esc(self.ylabel)}</text>'
            )
        out.append("</svg>")
        return "\n".join(out) + "\n"

    def save(self, path):
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(self.render())
        return path


def _segments(good):
    segs, cur = [], []
    for j, g in enumerate(good):
        if g:
            cur.append(j)
        elif cur:
            segs.append(cur)
            cur = []
    if cur:
        segs.append(cur)
    return segs


def _esc(s):
    return str(s).replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")
