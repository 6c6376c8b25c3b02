"""Synthetic road scenes for tests, demos and smoke runs."""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .netgraph import GeoGraph, rasterize, write_graph
from .raster import gaussian_blur, normalize, save_rgb

__all__ = [
    "street_grid",
    "random_streets",
    "density_from_graph",
    "dead_end_field",
    "render_rgb",
    "write_corpus",
]


def street_grid(size: int = 512, n: int = 5, margin: float = 48.0) -> GeoGraph:
    """Regular ``n`` x ``n`` lattice of streets spanning ``[margin, size - margin]``."""
    lines = np.linspace(margin, size - margin, n)
    xy = [(x, y) for y in lines for x in lines]
    edges = []
    for i in range(n):
        for j in range(n):
            v = i * n + j
            if j + 1 < n:
                edges.append((v, v + 1))
            if i + 1 < n:
                edges.append((v, v + n))
    return GeoGraph(np.arange(n * n), xy, edges)


def random_streets(rng: np.random.Generator, size: int = 256, n: int = 4,
                   jitter: float = 0.08, drop: float = 0.25) -> GeoGraph:
    """Jittered lattice with a random subset of its streets removed."""
    margin = size / (2 * n)
    lines = np.linspace(margin, size - margin, n)
    step = lines[1] - lines[0] if n > 1 else size
    xy = np.array([(x, y) for y in lines for x in lines], dtype=np.float64)
    xy += rng.uniform(-jitter, jitter, xy.shape) * step
    xy = np.clip(np.rint(xy), 2, size - 3)
    edges = []
    for i in range(n):
        for j in range(n):
            v = i * n + j
            if j + 1 < n and rng.random() >= drop:
                edges.append((v, v + 1))
            if i + 1 < n and rng.random() >= drop:
                edges.append((v, v + n))
    ids = np.arange(n * n)
    used = np.zeros(n * n, dtype=bool)
    used[np.asarray(edges, dtype=np.int64).ravel()] = True
    return GeoGraph.from_id_edges(ids[used], xy[used], edges)


def density_from_graph(g: GeoGraph, size: int, half_width: float = 6.5, noise: float = 0.1,
                       blur: float = 4.0, rng: np.random.Generator | None = None) -> np.ndarray:
    """Rasterised road band plus Gaussian noise, blurred and normalised."""
    rng = np.random.default_rng(0) if rng is None else rng
    band = rasterize(g, half_width, (size, size)).astype(np.float64)
    return normalize(gaussian_blur(band + rng.normal(0.0, noise, band.shape), blur))


def dead_end_field(size: int = 128):
    """A two-peak main road with a fading side branch that ends mid-image.

    Returns ``(field, endpoint)`` where ``endpoint`` is the ``(x, y)`` of the
    branch's dead end.  The branch only descends away from the main road,
    so it carries no maximum of its own.
    """
    ys, xs = np.mgrid[0:size, 0:size]
    mid = size // 2
    top = size // 4
    end = (mid, int(round(size * 0.78)))
    main = GeoGraph([0, 1], [(8, top), (size - 9, top)], [(0, 1)])
    branch = GeoGraph([0, 1], [(mid, top), end], [(0, 1)])
    on_main = rasterize(main, 3.5, (size, size))
    on_branch = rasterize(branch, 3.5, (size, size))
    v_main = 0.6 + 0.4 * np.abs(xs - mid) / (mid - 8)
    v_branch = 0.58 - 0.08 * (ys - top) / (end[1] - top)
    field = np.where(on_main, v_main, np.where(on_branch, v_branch, 0.0))
    return gaussian_blur(field, 1.5), np.array(end, dtype=np.float64)


def render_rgb(g: GeoGraph, size: int, rng: np.random.Generator, half_width: float = 4.0) -> np.ndarray:
    """Fake aerial image: textured ground, grey roads, dark occluding blobs."""
    ground = gaussian_blur(rng.normal(0.0, 1.0, (size, size)), 6.0)
    ground = 0.35 + 0.25 * normalize(ground)
    road = gaussian_blur(rasterize(g, half_width, (size, size)).astype(np.float64), 1.0)
    lum = ground * (1.0 - road) + 0.8 * road
    # trees and cars partially covering the roads
    blobs = np.zeros((size, size))
    k = max(1, size * size // 2000)
    cx = rng.integers(0, size, k)
    cy = rng.integers(0, size, k)
    blobs[cy, cx] = 1.0
    blobs = np.clip(gaussian_blur(blobs, 2.0) * 30.0, 0.0, 1.0)
    lum = lum * (1.0 - 0.6 * blobs)
    lum = lum + rng.normal(0.0, 0.04, lum.shape)
    tint = np.array([1.0, 0.95, 0.85])
    rgb = np.clip(lum[..., None] * tint * 255.0, 0.0, 255.0)
    return np.rint(rgb)


def write_corpus(root, n: int = 20, size: int = 160, seed: int = 0) -> list[str]:
    """Write ``n`` synthetic scenes as ``images/<id>.ppm`` + ``graphs/<id>.graph``."""
    root = Path(root)
    (root / "images").mkdir(parents=True, exist_ok=True)
    (root / "graphs").mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    ids = []
    for k in range(n):
        name = f"img{k:03d}"
        g = random_streets(rng, size)
        save_rgb(render_rgb(g, size, rng), root / "images" / f"{name}.ppm")
        write_graph(g, root / "graphs" / f"{name}.graph")
        ids.append(name)
    return ids
