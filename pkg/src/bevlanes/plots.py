"""SVG plots of BEV scenes: lane overlays and tile score heat maps.

Pure-string SVG output, no raster dependencies. Plot space is the BEV plane
itself (meters): x to the right, y (forward) upward, so the near edge of the
grid sits at the bottom of the image. Ground truth is drawn in red,
predictions in blue; heat maps shade tiles from green (high score) to red
(low score).
"""

from __future__ import annotations

import numpy as np

from .clustering import Curve
from .geometry import GridSpec

_SCALE = 8.0  # SVG pixels per meter
_MARGIN = 1.0  # meters of padding around the grid


def _header(grid: GridSpec) -> tuple[str, float, float]:
    w = (grid.x_extent + 2 * _MARGIN) * _SCALE
    h = (grid.y_extent + 2 * _MARGIN) * _SCALE
    return (f'<svg xmlns="http://www.w3.org/2000/svg" width="{w:.0f}" height="{h:.0f}" '
            f'viewBox="0 0 {w:.2f} {h:.2f}">'), w, h


def _to_px(x: float, y: float, grid: GridSpec) -> tuple[float, float]:
    px = (x - grid.x_min + _MARGIN) * _SCALE
    py = (grid.y_max + _MARGIN - y) * _SCALE  # flip: +y points up
    return px, py


def _polyline(points, grid: GridSpec, color: str, width: float) -> str:
    coords = " ".join(f"{px:.2f},{py:.2f}" for px, py in
                      (_to_px(p[0], p[1], grid) for p in points))
    return (f'<polyline points="{coords}" fill="none" stroke="{color}" '
            f'stroke-width="{width:.2f}" stroke-linecap="round"/>')


def _grid_frame(grid: GridSpec) -> list[str]:
    parts = []
    x0, y0 = _to_px(grid.x_min, grid.y_max, grid)
    parts.append(f'<rect x="{x0:.2f}" y="{y0:.2f}" width="{grid.x_extent * _SCALE:.2f}" '
                 f'height="{grid.y_extent * _SCALE:.2f}" fill="none" stroke="#999" '
                 f'stroke-width="1"/>')
    for j in range(1, grid.n_cols):
        x = grid.x_min + j * grid.tile_width
        (px, py0), (_, py1) = _to_px(x, grid.y_min, grid), _to_px(x, grid.y_max, grid)
        parts.append(f'<line x1="{px:.2f}" y1="{py0:.2f}" x2="{px:.2f}" y2="{py1:.2f}" '
                     f'stroke="#ddd" stroke-width="0.5"/>')
    for i in range(1, grid.n_rows):
        y = grid.y_min + i * grid.tile_length
        (px0, py), (px1, _) = _to_px(grid.x_min, y, grid), _to_px(grid.x_max, y, grid)
        parts.append(f'<line x1="{px0:.2f}" y1="{py:.2f}" x2="{px1:.2f}" y2="{py:.2f}" '
                     f'stroke="#ddd" stroke-width="0.5"/>')
    return parts


def scene_svg(gt_curves: list[Curve], pred_curves: list[Curve], grid: GridSpec) -> str:
    """BEV overlay: grid frame, ground truth in red, predictions in blue."""
    header, _, _ = _header(grid)
    parts = [header]
    parts.extend(_grid_frame(grid))
    for curve in gt_curves:
        parts.append(_polyline(curve.points, grid, "#cc2222", 2.0))
    for curve in pred_curves:
        parts.append(_polyline(curve.points, grid, "#2244cc", 1.2))
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def heatmap_svg(scores: np.ndarray, grid: GridSpec) -> str:
    """Tile score heat map: green for high scores, red for low."""
    scores = np.asarray(scores, dtype=float)
    if scores.shape != (grid.n_rows, grid.n_cols):
        raise ValueError(f"scores shape {scores.shape} does not match grid "
                         f"({grid.n_rows}, {grid.n_cols})")
    header, _, _ = _header(grid)
    parts = [header]
    for i in range(grid.n_rows):
        for j in range(grid.n_cols):
            s = min(1.0, max(0.0, float(scores[i, j])))
            r, g = int(round(220 * (1.0 - s))), int(round(200 * s))
            x = grid.x_min + j * grid.tile_width
            y = grid.y_min + (i + 1) * grid.tile_length
            px, py = _to_px(x, y, grid)
            parts.append(
                f'<rect x="{px:.2f}" y="{py:.2f}" width="{grid.tile_width * _SCALE:.2f}" '
                f'height="{grid.tile_length * _SCALE:.2f}" fill="rgb({r},{g},40)" '
                f'stroke="#666" stroke-width="0.3"/>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"
