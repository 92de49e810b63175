"""Minimal SVG 1.1 scatter plots: target samples in red, generated in blue."""
from __future__ import annotations

from xml.sax.saxutils import escape

import numpy as np

SIZE = 400
EXTENT = 1.5  # unit circle plus margin


def _to_px(points, extent, size):
    p = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    px = (p[:, 0] + extent) / (2 * extent) * size
    py = (extent - p[:, 1]) / (2 * extent) * size
    keep = (px >= 0) & (px <= size) & (py >= 0) & (py <= size)
    return px[keep], py[keep]


def scatter_svg(target, generated, title="", extent=EXTENT, size=SIZE, radius=1.5):
    """SVG text for a fixed ``[-extent, extent]^2`` viewport; points outside are clipped."""
    parts = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{size}" '
        f'height="{size}" viewBox="0 0 {size} {size}">',
        f'<rect x="0" y="0" width="{size}" height="{size}" fill="white" stroke="black"/>',
    ]
    c = size / 2
    r = size / (2 * extent)
    parts.append(f'<circle cx="{c:g}" cy="{c:g}" r="{r:g}" fill="none" stroke="#cccccc"/>')
    for pts, colour, cls in ((target, "red", "target"), (generated, "blue", "generated")):
        parts.append(f'<g class="{cls}" fill="{colour}" fill-opacity="0.6">')
        for x, y in zip(*_to_px(pts, extent, size)):
            parts.append(f'<circle cx="{x:.2f}" cy="{y:.2f}" r="{radius}"/>')
        parts.append("</g>")
    if title:
        parts.append(f'<text x="6" y="16" font-family="sans-serif" font-size="12">'
                     f'{escape(title)}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def write_scatter(path, target, generated, title=""):
    with open(path, "w") as fh:
        fh.write(scatter_svg(target, generated, title))
