"""Graph similarity: APLS and average Hausdorff distance.

APLS compares shortest-path lengths between node pairs of one graph with
those between their snapped counterparts in the other graph, in both
directions, and takes the harmonic mean.  By default the nodes are the arc
endpoints (junctions and dead ends) plus isolated vertices, so degree-2
vertices only describe edge geometry.  A closed loop also gets a node at
the vertex nearest half its length.  ``nodes="all"`` enumerates every
vertex instead.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse
from scipy.sparse.csgraph import dijkstra
from scipy.spatial import cKDTree

from .errors import ParameterError
from .netgraph import GeoGraph, decompose_arcs

__all__ = [
    "DEFAULT_MAX",
    "AplsResult",
    "ScoreReport",
    "path_graph",
    "apls",
    "sample_points",
    "one_way_hausdorff",
    "avg_hausdorff",
    "score",
]

DEFAULT_MAX = 500.0
_CHUNK = 256


@dataclass(frozen=True)
class AplsResult:
    apls: float
    c12: float
    c21: float
    n12: int
    n21: int
    mean_snap12: float
    mean_snap21: float


@dataclass(frozen=True)
class ScoreReport:
    apls: float
    c12: float
    c21: float
    avg_hausdorff: float
    diagnostics: dict = field(default_factory=dict)


def path_graph(g: GeoGraph, nodes: str = "junctions", step: float | None = None):
    """Node coordinates and symmetric length matrix used for path enumeration.

    With ``step`` set, control nodes are inserted every ``step`` pixels of
    arclength along each arc (each edge for ``nodes="all"``).  Parallel
    connections keep their shortest length.
    """
    if nodes not in ("junctions", "all"):
        raise ParameterError(f"unknown node mode {nodes!r}")
    if step is not None and not step > 0:
        raise ParameterError("densify step must be > 0")
    if nodes == "all":
        polylines = [[int(i), int(j)] for i, j in g.edges]
    else:
        polylines = []
        for a in decompose_arcs(g):
            path = [int(v) for v in a.vertices]
            if len(path) > 2 and path[0] == path[-1]:
                # a closed loop gets a second node halfway round, or no path
                # would ever run along it
                p = g.xy[path]
                cum = np.concatenate([[0.0], np.cumsum(np.hypot(*(p[1:] - p[:-1]).T))])
                mid = int(np.argmin(np.abs(cum[1:-1] - cum[-1] / 2))) + 1
                polylines += [path[: mid + 1], path[mid:]]
            else:
                polylines.append(path)
    node_of: dict[int, int] = {}
    coords: list = []
    rows: list[int] = []
    cols: list[int] = []
    weights: list[float] = []

    def node(v):
        if v not in node_of:
            node_of[v] = len(coords)
            coords.append(g.xy[v])
        return node_of[v]

    for path in polylines:
        p = g.xy[path]
        seg = np.hypot(*(p[1:] - p[:-1]).T)
        cum = np.concatenate([[0.0], np.cumsum(seg)])
        total = float(cum[-1])
        stops = [0.0]
        pts = [node(path[0])]
        if step is not None:
            k = int(math.ceil(total / step - 1e-9)) - 1
            for s in np.arange(1, k + 1) * step:
                i = min(int(np.searchsorted(cum, s, side="right")) - 1, len(seg) - 1)
                t = (s - cum[i]) / seg[i]
                pts.append(len(coords))
                coords.append(p[i] + t * (p[i + 1] - p[i]))
                stops.append(float(s))
        stops.append(total)
        pts.append(node(path[-1]))
        for u, v, w in zip(pts[:-1], pts[1:], np.diff(stops)):
            if u != v and w > 0:
                rows.append(u)
                cols.append(v)
                weights.append(w)
    for v in np.flatnonzero(g.degree == 0):
        node(int(v))
    xy = np.array(coords, dtype=np.float64).reshape(-1, 2)
    return xy, _symmetric_min(len(xy), rows, cols, weights)


def _symmetric_min(n, rows, cols, weights):
    if not rows:
        return sparse.csr_matrix((n, n))
    r = np.concatenate([rows, cols])
    c = np.concatenate([cols, rows])
    w = np.concatenate([weights, weights])
    order = np.lexsort((w, c, r))
    r, c, w = r[order], c[order], w[order]
    first = np.ones(r.size, dtype=bool)
    first[1:] = (r[1:] != r[:-1]) | (c[1:] != c[:-1])
    return sparse.csr_matrix((w[first], (r[first], c[first])), shape=(n, n))


def _direction(xy1, adj1, xy2, adj2, max_snap):
    """Returns (C, number of pairs, mean snap distance) for one direction."""
    n1 = xy1.shape[0]
    if n1 < 2:
        return 0.0, 0, 0.0
    if xy2.shape[0] == 0:
        # no counterpart for any node: every pair costs 1
        n_pairs = _count_pairs(adj1)
        return 0.0, n_pairs, math.inf
    snap_d, snap = cKDTree(xy2).query(xy1)
    far = snap_d > max_snap
    targets, snap_row = np.unique(snap, return_inverse=True)
    total = 0.0
    n_pairs = 0
    for lo in range(0, n1, _CHUNK):
        src = np.arange(lo, min(lo + _CHUNK, n1))
        d1 = dijkstra(adj1, indices=src)
        d2_rows = dijkstra(adj2, indices=targets[snap_row[src]])
        d2 = d2_rows[:, snap]
        upper = np.arange(n1)[None, :] > src[:, None]
        valid = upper & np.isfinite(d1)
        L = d1[valid]
        Lp = d2[valid]
        ok = np.isfinite(Lp)
        if np.isfinite(max_snap):
            bad = far[src][:, None] | far[None, :]
            ok &= ~bad[valid]
        with np.errstate(invalid="ignore", divide="ignore"):
            cost = np.where(ok, np.minimum(1.0, np.abs(L - Lp) / L), 1.0)
        total += float(cost.sum())
        n_pairs += int(valid.sum())
    if n_pairs == 0:
        return 0.0, 0, float(snap_d.mean())
    return 1.0 - total / n_pairs, n_pairs, float(snap_d.mean())


def _count_pairs(adj):
    n_comp, labels = sparse.csgraph.connected_components(adj, directed=False)
    sizes = np.bincount(labels)
    return int((sizes * (sizes - 1) // 2).sum())


def apls(
    g1: GeoGraph,
    g2: GeoGraph,
    densify_step: float | None = None,
    max_snap: float = math.inf,
    nodes: str = "junctions",
) -> AplsResult:
    """Average path length similarity of two graphs.

    For every connected node pair ``(a, b)`` of ``g1`` the cost is
    ``min(1, |L(a,b) - L(a',b')| / L(a,b))`` where ``a'``, ``b'`` are the
    nodes of ``g2`` nearest to ``a``, ``b``; it is 1 when ``a'`` and ``b'``
    are disconnected or either snap exceeds ``max_snap``.  ``C = 1 - mean
    cost`` per direction; APLS is the harmonic mean of both directions and
    is 0 when either is 0 or either graph has no path.
    """
    xy1, adj1 = path_graph(g1, nodes, densify_step)
    xy2, adj2 = path_graph(g2, nodes, densify_step)
    c12, n12, s12 = _direction(xy1, adj1, xy2, adj2, max_snap)
    c21, n21, s21 = _direction(xy2, adj2, xy1, adj1, max_snap)
    if c12 <= 0.0 or c21 <= 0.0:
        value = 0.0
    else:
        value = 2.0 / (1.0 / c12 + 1.0 / c21)
    return AplsResult(value, c12, c21, n12, n21, s12, s21)


def sample_points(g: GeoGraph, step: float = 1.0) -> np.ndarray:
    """Points every ``step`` pixels along each edge, all vertices included."""
    if not step > 0:
        raise ParameterError("sample step must be > 0")
    if g.n_edges == 0:
        return g.xy.copy()
    a = g.xy[g.edges[:, 0]]
    b = g.xy[g.edges[:, 1]]
    lengths = g.lengths
    counts = np.ceil(lengths / step - 1e-9).astype(np.int64) - 1
    counts = np.maximum(counts, 0)
    owner = np.repeat(np.arange(g.n_edges), counts)
    first = np.cumsum(counts) - counts
    k = np.arange(owner.size) - first[owner] + 1
    t = (k * step / lengths[owner])[:, None]
    interior = a[owner] + t * (b[owner] - a[owner])
    return np.concatenate([g.xy, interior])


def one_way_hausdorff(p1: np.ndarray, p2: np.ndarray, max_value: float = DEFAULT_MAX) -> float:
    """Mean distance from each point of ``p1`` to its nearest point of ``p2``."""
    if len(p1) == 0 and len(p2) == 0:
        return 0.0
    if len(p1) == 0 or len(p2) == 0:
        return float(max_value)
    d, _ = cKDTree(p2).query(p1)
    return float(d.mean())


def avg_hausdorff(
    g1: GeoGraph, g2: GeoGraph, sample_step: float = 1.0, max_value: float = DEFAULT_MAX
) -> float:
    """Symmetrised average Hausdorff distance.

    Sum of both one-way averages; ``max_value`` in total when exactly one
    graph is empty and 0 when both are.
    """
    p1 = sample_points(g1, sample_step)
    p2 = sample_points(g2, sample_step)
    if len(p1) == 0 and len(p2) == 0:
        return 0.0
    if len(p1) == 0 or len(p2) == 0:
        return float(max_value)
    return one_way_hausdorff(p1, p2, max_value) + one_way_hausdorff(p2, p1, max_value)


def score(
    g1: GeoGraph,
    g2: GeoGraph,
    *,
    densify_step: float | None = None,
    max_snap: float = math.inf,
    nodes: str = "junctions",
    sample_step: float = 1.0,
    max_value: float = DEFAULT_MAX,
) -> ScoreReport:
    """APLS and average Hausdorff distance of ``g2`` against reference ``g1``."""
    a = apls(g1, g2, densify_step, max_snap, nodes)
    sh = avg_hausdorff(g1, g2, sample_step, max_value)
    diag = {
        "pairs12": a.n12,
        "pairs21": a.n21,
        "snap12": a.mean_snap12,
        "snap21": a.mean_snap21,
    }
    return ScoreReport(a.apls, a.c12, a.c21, sh, diag)
