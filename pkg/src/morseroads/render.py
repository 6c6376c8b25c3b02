"""SVG figures: graphs drawn over a density raster."""

from __future__ import annotations

import base64
import html
import io
import os
from pathlib import Path

import numpy as np
from PIL import Image

from .netgraph import GeoGraph, decompose_arcs

__all__ = ["PALETTE", "render_svg", "write_svg"]

PALETTE = ("#ffd400", "#e6194b", "#3cb44b", "#4363d8", "#f58231", "#911eb4", "#42d4f4")


def _png_data_uri(field: np.ndarray) -> str:
    gray = np.rint(np.clip(field, 0.0, 1.0) * 255.0).astype(np.uint8)
    buf = io.BytesIO()
    Image.fromarray(gray, mode="L").save(buf, format="PNG", optimize=False)
    return "data:image/png;base64," + base64.b64encode(buf.getvalue()).decode("ascii")


def _fmt(v: float) -> str:
    return f"{v:.2f}".rstrip("0").rstrip(".")


def render_svg(field: np.ndarray, graphs, stroke_width: float = 2.0, labels=None) -> str:
    """SVG text with ``field`` as an embedded grayscale image and one
    ``<g>`` of arc polylines per graph, in the given order."""
    field = np.asarray(field, dtype=np.float64)
    height, width = field.shape
    out = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="-0.5 -0.5 {width} {height}">',
        f'<image x="-0.5" y="-0.5" width="{width}" height="{height}" '
        f'style="image-rendering:pixelated" href="{_png_data_uri(field)}"/>',
    ]
    for k, g in enumerate(graphs):
        name = html.escape(labels[k] if labels else f"graph{k}", quote=True)
        color = PALETTE[k % len(PALETTE)]
        out.append(
            f'<g id="{name}" fill="none" stroke="{color}" stroke-width="{_fmt(stroke_width)}" '
            'stroke-linecap="round" stroke-linejoin="round">'
        )
        for arc in decompose_arcs(g):
            pts = " ".join(f"{_fmt(x)},{_fmt(y)}" for x, y in g.xy[list(arc.vertices)])
            out.append(f'<polyline points="{pts}"/>')
        out.append("</g>")
    out.append("</svg>")
    return "\n".join(out) + "\n"


def write_svg(field: np.ndarray, graphs: list[GeoGraph], path, **kwargs) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(render_svg(field, graphs, **kwargs))
    os.replace(tmp, path)
