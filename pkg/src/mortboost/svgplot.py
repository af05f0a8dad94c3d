"""Minimal deterministic SVG writers (presentation output only).

Hand-rolled so that identical inputs give byte-identical files; nothing here
is acceptance-relevant beyond producing well-formed SVG.
"""

from __future__ import annotations

from xml.sax.saxutils import escape

import numpy as np

_PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b",
            "#e377c2", "#7f7f7f", "#bcbd22", "#17becf", "#aec7e8", "#ffbb78")


def _diverging_color(value: float, white_band: float, saturate: float = 0.5) -> str:
    """White within the band, then a red/blue ramp saturating at `saturate`.

    Anything outside the band gets at least one tint step, so only in-band
    cells render pure white.
    """
    if not np.isfinite(value) or abs(value) <= white_band:
        return "#ffffff"
    span = max(saturate - white_band, 1e-12)
    t = min(1.0, (abs(value) - white_band) / span)
    c = min(254, int(round(255 * (1.0 - t))))
    return f"#ff{c:02x}{c:02x}" if value > 0 else f"#{c:02x}{c:02x}ff"


def heatmap_svg(values, row_values, col_values, white_band: float, title: str,
                cell: int = 5) -> str:
    """Grid heatmap; rows ascend upward (first row at the bottom)."""
    values = np.asarray(values, dtype=np.float64)
    n_rows, n_cols = values.shape
    left, top, bottom = 50, 28, 30
    width = left + n_cols * cell + 10
    height = top + n_rows * cell + bottom
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
        f'<text x="{left}" y="16" font-family="sans-serif" font-size="12">{escape(title)}</text>',
    ]
    for r in range(n_rows):
        y = top + (n_rows - 1 - r) * cell
        for c in range(n_cols):
            color = _diverging_color(values[r, c], white_band)
            parts.append(
                f'<rect x="{left + c * cell}" y="{y}" width="{cell}" height="{cell}" fill="{color}"/>'
            )
    row_step = max(1, n_rows // 8)
    for r in range(0, n_rows, row_step):
        y = top + (n_rows - 1 - r) * cell + cell
        parts.append(
            f'<text x="4" y="{y}" font-family="sans-serif" font-size="9">{row_values[r]}</text>'
        )
    col_step = max(1, n_cols // 8)
    for c in range(0, n_cols, col_step):
        parts.append(
            f'<text x="{left + c * cell}" y="{height - 10}" font-family="sans-serif" '
            f'font-size="9">{col_values[c]}</text>'
        )
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def _panel(x, series, dots, title, x0, y0, w, h, y_log):
    """One line/scatter panel as SVG fragments (fixed margins inside the box)."""
    ml, mr, mt, mb = 34, 6, 16, 18
    pw, ph = w - ml - mr, h - mt - mb
    all_y = [v for _, ys in series for v in ys if np.isfinite(v)]
    if dots:
        all_y += [v for _, v in dots if np.isfinite(v)]
    if y_log:
        all_y = [v for v in all_y if v > 0]
        all_y = [np.log10(v) for v in all_y] or [0.0]
    if not all_y:
        all_y = [0.0]
    y_min, y_max = min(all_y), max(all_y)
    if y_max <= y_min:
        y_max = y_min + 1.0
    x_min, x_max = float(min(x)), float(max(x))
    if x_max <= x_min:
        x_max = x_min + 1.0

    def sx(v):
        return x0 + ml + (float(v) - x_min) / (x_max - x_min) * pw

    def sy(v):
        if y_log:
            v = np.log10(v) if v > 0 else y_min
        return y0 + mt + (y_max - float(v)) / (y_max - y_min) * ph

    parts = [
        f'<rect x="{x0 + ml}" y="{y0 + mt}" width="{pw}" height="{ph}" fill="none" '
        f'stroke="#cccccc"/>',
        f'<text x="{x0 + ml}" y="{y0 + 12}" font-family="sans-serif" font-size="10">'
        f"{escape(title)}</text>",
        f'<text x="{x0 + 2}" y="{y0 + mt + 8}" font-family="sans-serif" font-size="8">'
        f"{y_max:.3g}</text>",
        f'<text x="{x0 + 2}" y="{y0 + mt + ph}" font-family="sans-serif" font-size="8">'
        f"{y_min:.3g}</text>",
    ]
    for idx, (label, ys) in enumerate(series):
        pts = " ".join(
            f"{sx(xv):.2f},{sy(yv):.2f}"
            for xv, yv in zip(x, ys)
            if np.isfinite(yv) and (not y_log or yv > 0)
        )
        if pts:
            parts.append(
                f'<polyline points="{pts}" fill="none" '
                f'stroke="{_PALETTE[idx % len(_PALETTE)]}" stroke-width="1"/>'
            )
    if dots:
        for xv, yv in dots:
            if np.isfinite(yv) and (not y_log or yv > 0):
                parts.append(f'<circle cx="{sx(xv):.2f}" cy="{sy(yv):.2f}" r="1.4" fill="#333333"/>')
    return parts


def panels_svg(panels: list[dict], ncol: int = 3, panel_w: int = 260, panel_h: int = 170) -> str:
    """Small-multiple layout. Each panel dict: title, x, series=[(label, ys)],
    optional dots=[(x, y)], optional y_log=True."""
    n = len(panels)
    nrow = (n + ncol - 1) // ncol
    width, height = ncol * panel_w, nrow * panel_h
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">'
    ]
    for i, p in enumerate(panels):
        x0 = (i % ncol) * panel_w
        y0 = (i // ncol) * panel_h
        parts.extend(
            _panel(
                p["x"],
                p.get("series", []),
                p.get("dots"),
                p["title"],
                x0,
                y0,
                panel_w,
                panel_h,
                p.get("y_log", False),
            )
        )
    parts.append("</svg>")
    return "\n".join(parts) + "\n"
