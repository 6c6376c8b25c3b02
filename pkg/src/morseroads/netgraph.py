"""Geometric graphs: arcs, arc-intensity filtering, rasterisation and I/O.

A :class:`GeoGraph` stores vertex ids, their pixel coordinates and straight
edges.  Edges are kept as pairs of *positions* into the vertex arrays,
canonicalised (``i < j``) and sorted, so two graphs describing the same
vertex/edge sets compare equal regardless of input order.

Text format::

    GEOGRAPH 1
    V <count>
    <id> <x> <y>
    ...
    E <count>
    <id_u> <id_v>
    ...
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import sparse

from .errors import BoundsError, FormatError, ParameterError

__all__ = [
    "GeoGraph",
    "Arc",
    "decompose_arcs",
    "filter_arcs",
    "rasterize",
    "densify",
    "straighten",
    "read_graph",
    "write_graph",
    "format_graph",
    "parse_graph",
]

_EPS = 1e-12


class GeoGraph:
    """Undirected graph embedded in the pixel plane."""

    __slots__ = ("ids", "xy", "edges", "density")

    def __init__(self, ids, xy, edges=None, density=None):
        ids = np.asarray(ids, dtype=np.int64).reshape(-1)
        xy = np.asarray(xy, dtype=np.float64).reshape(-1, 2)
        if ids.size != xy.shape[0]:
            raise ValueError("ids and xy differ in length")
        if np.unique(ids).size != ids.size:
            raise ValueError("duplicate vertex id")
        if edges is None:
            edges = np.empty((0, 2), dtype=np.int64)
        edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
        if edges.size and (edges.min() < 0 or edges.max() >= ids.size):
            raise ValueError("edge endpoint out of range")
        if np.any(edges[:, 0] == edges[:, 1]):
            raise ValueError("self-loop")
        edges = np.sort(edges, axis=1)
        if edges.size:
            # one int64 key per edge sorts far faster than rows
            key = np.unique(edges[:, 0] * ids.size + edges[:, 1])
            edges = np.stack(np.divmod(key, ids.size), axis=1)
        self.ids = ids
        self.xy = xy
        self.edges = edges
        if np.any(self.lengths <= 0):
            raise ValueError("zero-length edge")
        self.density = None if density is None else np.asarray(density, dtype=np.float64).reshape(-1)

    @classmethod
    def empty(cls) -> "GeoGraph":
        return cls(np.empty(0, dtype=np.int64), np.empty((0, 2)))

    @classmethod
    def from_id_edges(cls, ids, xy, id_edges, density=None) -> "GeoGraph":
        """Build from edges given as vertex *ids* rather than positions."""
        ids = np.asarray(ids, dtype=np.int64).reshape(-1)
        id_edges = np.asarray(id_edges, dtype=np.int64).reshape(-1, 2)
        order = np.argsort(ids, kind="stable")
        pos = np.searchsorted(ids[order], id_edges)
        pos = np.clip(pos, 0, max(ids.size - 1, 0))
        if id_edges.size and (ids.size == 0 or np.any(ids[order][pos] != id_edges)):
            raise ValueError("edge references an undeclared vertex id")
        return cls(ids, xy, order[pos] if id_edges.size else None, density)

    @property
    def n_vertices(self) -> int:
        return int(self.ids.size)

    @property
    def n_edges(self) -> int:
        return int(self.edges.shape[0])

    @property
    def lengths(self) -> np.ndarray:
        d = self.xy[self.edges[:, 0]] - self.xy[self.edges[:, 1]]
        return np.hypot(d[:, 0], d[:, 1])

    @property
    def degree(self) -> np.ndarray:
        return np.bincount(self.edges.ravel(), minlength=self.n_vertices)

    def id_edges(self) -> np.ndarray:
        return self.ids[self.edges]

    def adjacency(self) -> sparse.csr_matrix:
        """Symmetric sparse matrix of Euclidean edge lengths."""
        n = self.n_vertices
        w = self.lengths
        i, j = self.edges[:, 0], self.edges[:, 1]
        return sparse.csr_matrix(
            (np.concatenate([w, w]), (np.concatenate([i, j]), np.concatenate([j, i]))), shape=(n, n)
        )

    def edge_subgraph(self, keep: np.ndarray, drop_isolated: bool = True) -> "GeoGraph":
        """Graph with the selected edges; vertices left without edges are dropped.

        Vertices that were already isolated are kept.
        """
        keep = np.asarray(keep, dtype=bool)
        edges = self.edges[keep]
        if drop_isolated:
            used = np.zeros(self.n_vertices, dtype=bool)
            used[edges.ravel()] = True
            used |= self.degree == 0
        else:
            used = np.ones(self.n_vertices, dtype=bool)
        remap = np.cumsum(used) - 1
        return GeoGraph(
            self.ids[used],
            self.xy[used],
            remap[edges],
            None if self.density is None else self.density[used],
        )

    def __eq__(self, other) -> bool:
        if not isinstance(other, GeoGraph):
            return NotImplemented
        if self.n_vertices != other.n_vertices or self.n_edges != other.n_edges:
            return False
        a = np.argsort(self.ids)
        b = np.argsort(other.ids)
        if not (np.array_equal(self.ids[a], other.ids[b]) and np.array_equal(self.xy[a], other.xy[b])):
            return False
        ea = np.unique(np.sort(self.id_edges(), axis=1), axis=0)
        eb = np.unique(np.sort(other.id_edges(), axis=1), axis=0)
        return np.array_equal(ea, eb)

    __hash__ = None

    def __repr__(self) -> str:
        return f"GeoGraph(n_vertices={self.n_vertices}, n_edges={self.n_edges})"


@dataclass(frozen=True)
class Arc:
    """Maximal chain through degree-2 vertices.

    ``vertices`` holds positions into the owning graph; a closed arc repeats
    its first vertex at the end.
    """

    vertices: tuple
    mean_intensity: float

    @property
    def closed(self) -> bool:
        return len(self.vertices) > 2 and self.vertices[0] == self.vertices[-1]


def _sample(field: np.ndarray, xy: np.ndarray) -> np.ndarray:
    field = np.asarray(field, dtype=np.float64)
    height, width = field.shape
    px = np.rint(xy).astype(np.int64)
    bad = (px[:, 0] < 0) | (px[:, 0] >= width) | (px[:, 1] < 0) | (px[:, 1] >= height)
    if np.any(bad):
        raise BoundsError(f"{int(bad.sum())} graph vertices lie outside the {width}x{height} raster")
    return field[px[:, 1], px[:, 0]]


def _incidence(g: GeoGraph):
    """CSR-style incident edge lists, each sorted by neighbour position."""
    n = g.n_vertices
    src = np.concatenate([g.edges[:, 0], g.edges[:, 1]])
    dst = np.concatenate([g.edges[:, 1], g.edges[:, 0]])
    eid = np.concatenate([np.arange(g.n_edges)] * 2)
    order = np.lexsort((dst, src))
    start = np.searchsorted(src[order], np.arange(n + 1))
    return start, dst[order], eid[order]


def _arc_paths(g: GeoGraph, weight: np.ndarray | None):
    start, nbr, eid = _incidence(g)
    deg = np.diff(start)
    seen = np.zeros(g.n_edges, dtype=bool)
    paths = []

    def walk(s, k):
        path = [s]
        e, cur = eid[k], nbr[k]
        while True:
            seen[e] = True
            path.append(int(cur))
            if deg[cur] != 2 or cur == s:
                return path
            a, b = start[cur], start[cur] + 1
            k2 = b if eid[a] == e else a
            e = eid[k2]
            if seen[e]:
                return path
            cur = nbr[k2]

    for s in np.flatnonzero(deg != 2):
        for k in range(start[s], start[s + 1]):
            if not seen[eid[k]]:
                paths.append(walk(int(s), k))
    # remaining edges form junction-free cycles
    rest = np.flatnonzero(~seen)
    if rest.size:
        verts = np.unique(g.edges[rest].ravel())
        key = weight if weight is not None else np.zeros(g.n_vertices)
        for v in verts[np.lexsort((g.ids[verts], key[verts]))[::-1]]:
            k = start[v]
            if seen[eid[k]]:
                continue
            paths.append(walk(int(v), k))
    return paths


def decompose_arcs(g: GeoGraph, field: np.ndarray | None = None) -> list[Arc]:
    """Split ``g`` into arcs.

    Arcs start and end at vertices of degree other than 2; cycles without a
    junction are broken at their highest-density vertex (highest id on ties).
    ``mean_intensity`` averages ``field`` over the arc's vertices, sampled at
    the nearest pixel; without a field it is NaN and cycles break at the
    highest id.
    """
    values = None if field is None else _sample(field, g.xy)
    arcs = []
    for path in _arc_paths(g, values):
        body = path[:-1] if len(path) > 2 and path[0] == path[-1] else path
        mean = float(np.mean(values[body])) if values is not None else float("nan")
        arcs.append(Arc(tuple(path), mean))
    return arcs


def _arc_edge_index(g: GeoGraph, arc: Arc) -> np.ndarray:
    v = np.asarray(arc.vertices)
    pairs = np.sort(np.stack([v[:-1], v[1:]], axis=1), axis=1)
    key = g.edges[:, 0] * g.n_vertices + g.edges[:, 1]
    return np.searchsorted(key, pairs[:, 0] * g.n_vertices + pairs[:, 1])


def filter_arcs(g: GeoGraph, field: np.ndarray, tau: float) -> GeoGraph:
    """Keep the arcs whose mean intensity is at least ``tau``."""
    if not 0.0 <= tau <= 1.0:
        raise ParameterError(f"tau must lie in [0, 1], got {tau}")
    keep = np.zeros(g.n_edges, dtype=bool)
    for arc in decompose_arcs(g, field):
        if arc.mean_intensity >= tau - _EPS:
            keep[_arc_edge_index(g, arc)] = True
    return g.edge_subgraph(keep)


def _segment_distance(px, py, ax, ay, bx, by):
    dx = bx - ax
    dy = by - ay
    ll = dx * dx + dy * dy
    with np.errstate(invalid="ignore", divide="ignore"):
        t = np.where(ll > 0, ((px - ax) * dx + (py - ay) * dy) / np.where(ll > 0, ll, 1.0), 0.0)
    t = np.clip(t, 0.0, 1.0)
    return np.hypot(px - (ax + t * dx), py - (ay + t * dy))


def rasterize(g: GeoGraph, half_width: float, dims: tuple[int, int]) -> np.ndarray:
    """Boolean ``(H, W)`` mask of pixels within ``half_width`` of an edge.

    Pixel ``(x, y)`` has its centre at coordinates ``(x, y)``.
    """
    if half_width < 0:
        raise ParameterError("half_width must be >= 0")
    width, height = dims
    mask = np.zeros((height, width), dtype=bool)
    if g.n_edges == 0:
        return mask
    # absorbs rounding in the point-segment distance
    limit = half_width + 1e-9
    a = g.xy[g.edges[:, 0]]
    b = g.xy[g.edges[:, 1]]
    r = int(np.ceil(half_width)) + 1
    lo = np.floor(np.minimum(a, b)).astype(np.int64) - r
    hi = np.ceil(np.maximum(a, b)).astype(np.int64) + r
    lo = np.maximum(lo, 0)
    hi = np.minimum(hi, [width - 1, height - 1])
    span = hi - lo + 1
    ok = np.all(span > 0, axis=1)
    # small boxes are batched through a shared window, large ones one by one
    box = int(2 * r + 4)
    small = ok & np.all(span <= box, axis=1)
    if np.any(small):
        oy, ox = np.mgrid[0:box, 0:box]
        ox = ox.ravel()
        oy = oy.ravel()
        idx = np.flatnonzero(small)
        for chunk in np.array_split(idx, max(1, idx.size // 4096 + 1)):
            if chunk.size == 0:
                continue
            px = lo[chunk, 0:1] + ox[None, :]
            py = lo[chunk, 1:2] + oy[None, :]
            inside = (px <= hi[chunk, 0:1]) & (py <= hi[chunk, 1:2])
            d = _segment_distance(
                px, py, a[chunk, 0:1], a[chunk, 1:2], b[chunk, 0:1], b[chunk, 1:2]
            )
            hit = inside & (d <= limit)
            mask[py[hit], px[hit]] = True
    for k in np.flatnonzero(ok & ~small):
        ys, xs = np.mgrid[lo[k, 1] : hi[k, 1] + 1, lo[k, 0] : hi[k, 0] + 1]
        d = _segment_distance(xs, ys, a[k, 0], a[k, 1], b[k, 0], b[k, 1])
        mask[ys[d <= limit], xs[d <= limit]] = True
    return mask


def densify(g: GeoGraph, step: float) -> GeoGraph:
    """Insert vertices every ``step`` pixels along each edge.

    New vertices get ids above the current maximum; path lengths between
    original vertices are preserved.
    """
    if step <= 0:
        raise ParameterError("step must be > 0")
    if g.n_edges == 0:
        return g
    ids = [g.ids]
    xy = [g.xy]
    edges = []
    next_pos = g.n_vertices
    next_id = int(g.ids.max()) + 1
    for (i, j), length in zip(g.edges, g.lengths):
        k = int(np.ceil(length / step - 1e-9)) - 1
        if k <= 0:
            edges.append((i, j))
            continue
        t = np.arange(1, k + 1) * step / length
        pts = g.xy[i] + t[:, None] * (g.xy[j] - g.xy[i])
        chain = [i, *range(next_pos, next_pos + k), j]
        ids.append(np.arange(next_id, next_id + k))
        xy.append(pts)
        edges.extend(zip(chain[:-1], chain[1:]))
        next_pos += k
        next_id += k
    return GeoGraph(np.concatenate(ids), np.concatenate(xy), np.array(edges))


def straighten(g: GeoGraph, max_deviation: float) -> GeoGraph:
    """Replace degree-2 chains by fewer straight segments.

    Douglas-Peucker on every arc: interior vertices are kept only where the
    polyline deviates from the chord by more than ``max_deviation`` pixels.
    """
    if max_deviation < 0:
        raise ParameterError("max_deviation must be >= 0")
    keep_edges = []
    for arc in decompose_arcs(g):
        path = list(arc.vertices)
        kept = _douglas_peucker(g.xy, path, max_deviation)
        keep_edges.extend(zip(kept[:-1], kept[1:]))
    keep_edges = [(a, b) for a, b in keep_edges if a != b]
    used = np.zeros(g.n_vertices, dtype=bool)
    if keep_edges:
        used[np.asarray(keep_edges).ravel()] = True
    used |= g.degree == 0
    remap = np.cumsum(used) - 1
    edges = remap[np.asarray(keep_edges, dtype=np.int64).reshape(-1, 2)]
    return GeoGraph(
        g.ids[used], g.xy[used], edges, None if g.density is None else g.density[used]
    )


def _douglas_peucker(xy, path, tol):
    if len(path) <= 2:
        return path
    if path[0] == path[-1]:
        # closed chain: split at the vertex farthest from the start
        p = xy[path]
        far = int(np.argmax(np.hypot(*(p - p[0]).T)))
        left = _douglas_peucker(xy, path[: far + 1], tol)
        right = _douglas_peucker(xy, path[far:], tol)
        return left[:-1] + right
    p = xy[path]
    d = _segment_distance(p[1:-1, 0], p[1:-1, 1], p[0, 0], p[0, 1], p[-1, 0], p[-1, 1])
    k = int(np.argmax(d))
    if d[k] <= tol:
        return [path[0], path[-1]]
    left = _douglas_peucker(xy, path[: k + 2], tol)
    right = _douglas_peucker(xy, path[k + 1 :], tol)
    return left[:-1] + right


# --------------------------------------------------------------------------
# I/O
# --------------------------------------------------------------------------


def format_graph(g: GeoGraph) -> str:
    lines = ["GEOGRAPH 1", f"V {g.n_vertices}"]
    lines += [f"{i} {x!r} {y!r}" for i, (x, y) in zip(g.ids.tolist(), g.xy.tolist())]
    lines.append(f"E {g.n_edges}")
    lines += [f"{u} {v}" for u, v in g.id_edges().tolist()]
    return "\n".join(lines) + "\n"


def parse_graph(text: str) -> GeoGraph:
    lines = [ln.strip() for ln in text.split("\n")]
    lines = [ln for ln in lines if ln]
    if not lines or lines[0].split() != ["GEOGRAPH", "1"]:
        raise FormatError("missing 'GEOGRAPH 1' header")
    try:
        tag, nv = lines[1].split()
        if tag != "V":
            raise ValueError
        nv = int(nv)
        vrows = [ln.split() for ln in lines[2 : 2 + nv]]
        if len(vrows) != nv or any(len(r) != 3 for r in vrows):
            raise ValueError
        ids = [int(r[0]) for r in vrows]
        xy = [(float(r[1]), float(r[2])) for r in vrows]
        tag, ne = lines[2 + nv].split()
        if tag != "E":
            raise ValueError
        ne = int(ne)
        erows = [ln.split() for ln in lines[3 + nv :]]
        if len(erows) != ne or any(len(r) != 2 for r in erows):
            raise ValueError
        eids = [(int(a), int(b)) for a, b in erows]
    except (ValueError, IndexError):
        raise FormatError("malformed graph file") from None
    if not np.all(np.isfinite(np.asarray(xy, dtype=np.float64))):
        raise FormatError("non-finite vertex coordinate")
    try:
        return GeoGraph.from_id_edges(ids, np.asarray(xy).reshape(-1, 2), eids)
    except ValueError as exc:
        raise FormatError(str(exc)) from None


def read_graph(path) -> GeoGraph:
    try:
        text = Path(path).read_text()
    except UnicodeDecodeError:
        raise FormatError(f"{path}: not a text file") from None
    return parse_graph(text)


def write_graph(g: GeoGraph, path) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(format_graph(g))
    tmp.replace(path)
