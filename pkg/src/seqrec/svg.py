"""Small, dependency-free SVG charts for training curves and histograms.

Output is deterministic: no timestamps, no randomness, fixed float
formatting. Good enough for run diagnostics, not a plotting library.
"""

from __future__ import annotations

import numpy as np

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf")

_MARGIN_LEFT = 64
_MARGIN_RIGHT = 16
_MARGIN_TOP = 34
_MARGIN_BOTTOM = 46


def _fmt(v: float) -> str:
    return f"{v:.2f}".rstrip("0").rstrip(".") if abs(v) < 1e6 else f"{v:.3g}"


def _ticks(lo: float, hi: float, n: int = 5) -> list[float]:
    if hi <= lo:
        hi = lo + 1.0
    raw = np.linspace(lo, hi, n)
    return [float(v) for v in raw]


class _Canvas:
    def __init__(self, width: int, height: int, title: str, x_label: str, y_label: str):
        self.width = width
        self.height = height
        self.parts = [
            f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
            f'viewBox="0 0 {width} {height}">',
            f'<rect width="{width}" height="{height}" fill="white"/>',
            f'<text x="{width / 2:.1f}" y="20" text-anchor="middle" '
            f'font-family="sans-serif" font-size="14">{title}</text>',
            f'<text x="{width / 2:.1f}" y="{height - 8}" text-anchor="middle" '
            f'font-family="sans-serif" font-size="12">{x_label}</text>',
            f'<text x="14" y="{height / 2:.1f}" text-anchor="middle" '
            f'font-family="sans-serif" font-size="12" '
            f'transform="rotate(-90 14 {height / 2:.1f})">{y_label}</text>',
        ]
        self.x0 = _MARGIN_LEFT
        self.x1 = width - _MARGIN_RIGHT
        self.y0 = height - _MARGIN_BOTTOM
        self.y1 = _MARGIN_TOP

    def scale(self, x_range, y_range):
        self.xr = x_range
        self.yr = y_range

    def px(self, x: float) -> float:
        lo, hi = self.xr
        span = hi - lo or 1.0
        return self.x0 + (x - lo) / span * (self.x1 - self.x0)

    def py(self, y: float) -> float:
        lo, hi = self.yr
        span = hi - lo or 1.0
        return self.y0 - (y - lo) / span * (self.y0 - self.y1)

    def axes(self):
        self.parts.append(
            f'<line x1="{self.x0}" y1="{self.y0}" x2="{self.x1}" y2="{self.y0}" stroke="black"/>'
        )
        self.parts.append(
            f'<line x1="{self.x0}" y1="{self.y0}" x2="{self.x0}" y2="{self.y1}" stroke="black"/>'
        )
        for t in _ticks(*self.xr):
            x = self.px(t)
            self.parts.append(f'<line x1="{x:.1f}" y1="{self.y0}" x2="{x:.1f}" y2="{self.y0 + 4}" stroke="black"/>')
            self.parts.append(
                f'<text x="{x:.1f}" y="{self.y0 + 18}" text-anchor="middle" '
                f'font-family="sans-serif" font-size="11">{_fmt(t)}</text>'
            )
        for t in _ticks(*self.yr):
            y = self.py(t)
            self.parts.append(f'<line x1="{self.x0 - 4}" y1="{y:.1f}" x2="{self.x0}" y2="{y:.1f}" stroke="black"/>')
            self.parts.append(
                f'<text x="{self.x0 - 8}" y="{y + 4:.1f}" text-anchor="end" '
                f'font-family="sans-serif" font-size="11">{_fmt(t)}</text>'
            )

    def legend(self, labels_colors):
        y = self.y1 + 4
        x = self.x0 + 10
        for label, color in labels_colors:
            self.parts.append(f'<rect x="{x}" y="{y}" width="12" height="12" fill="{color}"/>')
            self.parts.append(
                f'<text x="{x + 16}" y="{y + 10}" font-family="sans-serif" font-size="11">{label}</text>'
            )
            x += 16 + 8 * max(4, len(label))

    def render(self) -> str:
        return "\n".join(self.parts + ["</svg>"])


def line_chart(
    series: list[tuple[str, list[float], list[float]]],
    band: tuple[list[float], list[float], list[float]] | None = None,
    title: str = "",
    x_label: str = "",
    y_label: str = "",
    width: int = 720,
    height: int = 440,
) -> str:
    """Polyline chart; optional (xs, lo, hi) band drawn underneath the lines."""
    xs_all = [x for _, xs, _ in series for x in xs]
    ys_all = [y for _, _, ys in series for y in ys]
    if band is not None:
        xs_all += list(band[0])
        ys_all += list(band[1]) + list(band[2])
    if not xs_all:
        xs_all, ys_all = [0.0, 1.0], [0.0, 1.0]
    pad = 0.05 * ((max(ys_all) - min(ys_all)) or 1.0)
    canvas = _Canvas(width, height, title, x_label, y_label)
    canvas.scale((min(xs_all), max(xs_all)), (min(ys_all) - pad, max(ys_all) + pad))
    canvas.axes()
    if band is not None and len(band[0]):
        xs, lo, hi = band
        pts = [f"{canvas.px(x):.1f},{canvas.py(y):.1f}" for x, y in zip(xs, hi)]
        pts += [f"{canvas.px(x):.1f},{canvas.py(y):.1f}" for x, y in zip(reversed(xs), reversed(lo))]
        canvas.parts.append(f'<polygon points="{" ".join(pts)}" fill="#cccccc" fill-opacity="0.5"/>')
    colors = []
    for i, (label, xs, ys) in enumerate(series):
        color = PALETTE[i % len(PALETTE)]
        colors.append((label, color))
        pts = " ".join(f"{canvas.px(x):.1f},{canvas.py(y):.1f}" for x, y in zip(xs, ys))
        canvas.parts.append(f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="1.5"/>')
    canvas.legend(colors)
    return canvas.render()


def histogram_chart(
    groups: list[tuple[str, np.ndarray, np.ndarray]],
    title: str = "",
    x_label: str = "",
    y_label: str = "count",
    width: int = 720,
    height: int = 440,
) -> str:
    """Overlaid translucent histograms; each group is (label, edges, counts)."""
    xs_all = [float(e) for _, edges, _ in groups for e in edges]
    top = max((int(c) for _, _, counts in groups for c in counts), default=1)
    canvas = _Canvas(width, height, title, x_label, y_label)
    canvas.scale((min(xs_all), max(xs_all)), (0.0, float(top) * 1.05))
    canvas.axes()
    colors = []
    for i, (label, edges, counts) in enumerate(groups):
        color = PALETTE[i % len(PALETTE)]
        colors.append((label, color))
        for b, c in enumerate(counts):
            if c == 0:
                continue
            x_left = canvas.px(float(edges[b]))
            x_right = canvas.px(float(edges[b + 1]))
            y_top = canvas.py(float(c))
            canvas.parts.append(
                f'<rect x="{x_left:.1f}" y="{y_top:.1f}" width="{x_right - x_left:.1f}" '
                f'height="{canvas.y0 - y_top:.1f}" fill="{color}" fill-opacity="0.45"/>'
            )
    canvas.legend(colors)
    return canvas.render()
