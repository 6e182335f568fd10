"""Deterministic SVG heatmaps of metric maps and probability fields.

One rectangle per cell, fill linearly interpolated between two palette
endpoints over [vmin, vmax]; NaN cells render gray.  Output bytes depend
only on the inputs (fixed float formatting, no timestamps), so identical
maps produce identical files.
"""

import numpy as np

DEFAULT_PALETTE = ("#2166ac", "#b2182b")  # blue -> red
NAN_COLOR = "#808080"
CELL_PX = 16
LEGEND_H = 34


def _parse_color(text):
    text = text.strip().lstrip("#")
    if len(text) != 6:
        raise ValueError(f"palette colors must be #rrggbb, got {text!r}")
    return tuple(int(text[i : i + 2], 16) for i in (0, 2, 4))


def _lerp_color(lo, hi, t):
    return "#%02x%02x%02x" % tuple(round(a + t * (b - a)) for a, b in zip(lo, hi))


def _fmt(v):
    return format(float(v), ".6g")


def render_svg(values, out_path, vmin=None, vmax=None, palette=DEFAULT_PALETTE, cell_px=CELL_PX):
    """Write a grid heatmap with a numeric legend; returns the SVG text.

    ``values`` is a 2-D array (NaN = undefined) or a MetricMap.
    """
    if hasattr(values, "values"):
        values = values.values
    grid = np.asarray(values, dtype=np.float64)
    if grid.ndim != 2 or grid.size == 0:
        raise ValueError("render_svg needs a non-empty 2-D grid")
    defined = grid[np.isfinite(grid)]
    if vmin is None:
        vmin = float(defined.min()) if defined.size else 0.0
    if vmax is None:
        vmax = float(defined.max()) if defined.size else 1.0
    lo, hi = _parse_color(palette[0]), _parse_color(palette[1])
    rows, cols = grid.shape
    width = cols * cell_px
    height = rows * cell_px + LEGEND_H
    span = vmax - vmin

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
        f'<defs><linearGradient id="scale" x1="0" y1="0" x2="1" y2="0">'
        f'<stop offset="0" stop-color="{_lerp_color(lo, hi, 0.0)}"/>'
        f'<stop offset="1" stop-color="{_lerp_color(lo, hi, 1.0)}"/>'
        f"</linearGradient></defs>",
    ]
    for r in range(rows):
        for c in range(cols):
            v = grid[r, c]
            if not np.isfinite(v):
                fill = NAN_COLOR
            else:
                t = 0.5 if span == 0.0 else min(1.0, max(0.0, (v - vmin) / span))
                fill = _lerp_color(lo, hi, t)
            parts.append(
                f'<rect x="{c * cell_px}" y="{r * cell_px}" width="{cell_px}" height="{cell_px}" fill="{fill}"/>'
            )
    bar_y = rows * cell_px + 8
    parts.append(
        f'<rect x="0" y="{bar_y}" width="{width}" height="10" fill="url(#scale)"/>'
    )
    parts.append(
        f'<text x="0" y="{bar_y + 22}" font-family="monospace" font-size="11">{_fmt(vmin)}</text>'
    )
    parts.append(
        f'<text x="{width}" y="{bar_y + 22}" font-family="monospace" font-size="11" '
        f'text-anchor="end">{_fmt(vmax)}</text>'
    )
    parts.append("</svg>")
    text = "\n".join(parts) + "\n"
    with open(out_path, "w") as fh:
        fh.write(text)
    return text
