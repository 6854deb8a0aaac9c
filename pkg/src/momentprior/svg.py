"""Minimal SVG emitter built from rect, line and text elements only.

Coordinates are written with a fixed number of decimals so that identical
inputs give byte-identical files.
"""

from __future__ import annotations

from xml.sax.saxutils import escape

import numpy as np

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")


def _f(x: float) -> str:
    return f"{float(x):.2f}"


class Canvas:
    def __init__(self, width: float, height: float):
        self.width = width
        self.height = height
        self.items: list[str] = []

    def rect(self, x, y, w, h, fill="#000000", stroke=None, opacity=None):
        attrs = f'x="{_f(x)}" y="{_f(y)}" width="{_f(w)}" height="{_f(h)}" fill="{fill}"'
        if stroke:
            attrs += f' stroke="{stroke}"'
        if opacity is not None:
            attrs += f' fill-opacity="{_f(opacity)}"'
        self.items.append(f"<rect {attrs}/>")

    def line(self, x1, y1, x2, y2, stroke="#000000", width=1.0, dash=None):
        attrs = f'x1="{_f(x1)}" y1="{_f(y1)}" x2="{_f(x2)}" y2="{_f(y2)}" stroke="{stroke}" stroke-width="{_f(width)}"'
        if dash:
            attrs += f' stroke-dasharray="{dash}"'
        self.items.append(f"<line {attrs}/>")

    def text(self, x, y, s, size=12, anchor="start"):
        self.items.append(
            f'<text x="{_f(x)}" y="{_f(y)}" font-family="sans-serif" font-size="{size}" text-anchor="{anchor}">{escape(str(s))}</text>'
        )

    def render(self) -> str:
        head = (
            f'<svg xmlns="http://www.w3.org/2000/svg" width="{_f(self.width)}" height="{_f(self.height)}" '
            f'viewBox="0 0 {_f(self.width)} {_f(self.height)}">'
        )
        return "\n".join([head, *self.items, "</svg>"]) + "\n"


def _gray(v: float) -> str:
    level = int(round(255 * (1.0 - min(max(v, 0.0), 1.0))))
    return f"#{level:02x}{level:02x}{level:02x}"


def heatmap(matrix: np.ndarray, boundaries=(), title: str = "", cell: float = 6.0) -> str:
    """Gray-scale heatmap (values clipped to [0, 1]) with red boundary lines.

    ``boundaries`` are row/column indices at which a new block starts.
    """
    m = np.asarray(matrix, dtype=np.float64)
    n_rows, n_cols = m.shape
    pad, top = 10.0, 30.0
    c = Canvas(2 * pad + n_cols * cell, top + pad + n_rows * cell)
    if title:
        c.text(pad, 20, title)
    for i in range(n_rows):
        for j in range(n_cols):
            c.rect(pad + j * cell, top + i * cell, cell, cell, fill=_gray(m[i, j]))
    for b in boundaries:
        x = pad + b * cell
        y = top + b * cell
        c.line(x, top, x, top + n_rows * cell, stroke="#d62728", width=1.5)
        c.line(pad, y, pad + n_cols * cell, y, stroke="#d62728", width=1.5)
    return c.render()


def timeline(horizon: float, rows: list[tuple[str, list[tuple[float, float]]]], boundaries=(), title: str = "", width: float = 600.0) -> str:
    """Horizontal span rows over ``[0, horizon]`` with dashed boundary lines."""
    pad, left, top, row_h = 10.0, 110.0, 30.0, 22.0
    c = Canvas(left + width + pad, top + row_h * len(rows) + 2 * pad)
    scale = width / horizon
    if title:
        c.text(pad, 20, title)
    for k, (label, spans) in enumerate(rows):
        y = top + k * row_h
        c.text(pad, y + 15, label)
        c.rect(left, y + 3, width, row_h - 6, fill="#f0f0f0")
        for s, e in spans:
            c.rect(left + s * scale, y + 3, max(e - s, 0.0) * scale, row_h - 6, fill=PALETTE[k % len(PALETTE)], opacity=0.7)
    bottom = top + row_h * len(rows)
    for b in boundaries:
        c.line(left + b * scale, top, left + b * scale, bottom, stroke="#333333", dash="4,3")
    return c.render()


def line_chart(series: dict[str, list[float]], title: str = "", width: float = 600.0, height: float = 300.0) -> str:
    """Line chart drawn as connected segments, one color per series."""
    pad, top, legend = 40.0, 30.0, 16.0
    c = Canvas(width + 2 * pad, height + top + pad + legend * len(series))
    values = [v for ys in series.values() for v in ys]
    lo, hi = (min(values), max(values)) if values else (0.0, 1.0)
    if hi == lo:
        hi = lo + 1.0
    n = max((len(ys) for ys in series.values()), default=1)
    sx = width / max(n - 1, 1)
    sy = height / (hi - lo)
    if title:
        c.text(pad, 20, title)
    c.line(pad, top + height, pad + width, top + height)
    c.line(pad, top, pad, top + height)
    c.text(pad - 4, top + 4, f"{hi:.3g}", size=10, anchor="end")
    c.text(pad - 4, top + height, f"{lo:.3g}", size=10, anchor="end")
    for k, (name, ys) in enumerate(series.items()):
        color = PALETTE[k % len(PALETTE)]
        for i in range(len(ys) - 1):
            c.line(pad + i * sx, top + (hi - ys[i]) * sy, pad + (i + 1) * sx, top + (hi - ys[i + 1]) * sy, stroke=color, width=1.2)
        y = top + height + pad / 2 + k * legend
        c.rect(pad, y - 9, 10, 10, fill=color)
        c.text(pad + 16, y, name, size=11)
    return c.render()
