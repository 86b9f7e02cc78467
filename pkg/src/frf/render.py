"""SVG drawing of level-n cells in harmonic coordinates."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

_TRIANGLE = np.array([[0.0, 0.0], [1.0, 0.0], [0.5, np.sqrt(3) / 2]])


@dataclass(frozen=True)
class RenderSpec:
    level: int
    projection: str = "auto"  # "barycentric" (b = 3 only), "first-two", or "auto"
    stroke_width: float = 0.002
    highlight_null: bool = True
    size: int = 800


def project(coords, projection="auto"):
    """Map harmonic coordinates (..., b) to the plane."""
    b = coords.shape[-1]
    if projection == "auto":
        projection = "barycentric" if b == 3 else "first-two"
    if projection == "barycentric":
        if b != 3:
            raise ValueError("barycentric projection needs b = 3")
        return coords @ _TRIANGLE
    if projection == "first-two":
        return coords[..., :2].copy()
    raise ValueError(f"unknown projection {projection!r}")


def render_svg(cell_coords, spec, null=None, title=""):
    """One polygon per cell; ``cell_coords`` has shape (n_cells, b, b)."""
    pts = project(cell_coords, spec.projection)
    lo = pts.reshape(-1, 2).min(axis=0)
    hi = pts.reshape(-1, 2).max(axis=0)
    span = float(max((hi - lo).max(), 1e-12))
    pad = 0.02 * span
    # flip y so the picture is upright
    xy = np.empty_like(pts)
    xy[..., 0] = pts[..., 0] - lo[0] + pad
    xy[..., 1] = hi[1] - pts[..., 1] + pad
    w = float(hi[0] - lo[0]) + 2 * pad
    h = float(hi[1] - lo[1]) + 2 * pad
    sw = spec.stroke_width * span
    out = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" viewBox="0 0 {w:.6f} {h:.6f}" '
        f'width="{spec.size}" height="{int(round(spec.size * h / w))}">',
    ]
    if title:
        out.append(f"<title>{_escape(title)}</title>")
    out.append(f'<g fill="none" stroke="black" stroke-width="{sw:.6f}" stroke-linejoin="round">')
    for k, poly in enumerate(xy):
        attrs = ' fill="#d62728" stroke="#d62728"' if spec.highlight_null and null is not None and null[k] else ""
        pts_s = " ".join(f"{x:.6f},{y:.6f}" for x, y in poly)
        out.append(f'<polygon points="{pts_s}"{attrs}/>')
    out.append("</g>")
    out.append("</svg>")
    return "\n".join(out) + "\n"


def _escape(text):
    return text.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")
