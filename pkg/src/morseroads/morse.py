"""Ridge-graph reconstruction from a density field.

The output graph is the union of the 1-stable manifolds of the important
saddle edges: each selected edge plus the gradient paths from its two
endpoints up to a maximum.

Two kinds of saddle edge are considered:

* max-saddle edges, which merge two super-level components; importance is
  the persistence of the maximum they kill;
* cycle edges, which close a loop of the super-level set around a valley;
  importance is the depth of that valley below the edge.

The gradient is steepest ascent on the 1-skeleton.  With ``cancel=True`` the
max-saddle pairs below ``delta`` are cancelled first: their saddle edges join
the ascent forest, so a path that reaches an unimportant maximum continues
across its saddle to the surviving maximum.  For ``delta = 0`` nothing is
cancelled and paths are plain steepest ascent.
"""

from __future__ import annotations

from dataclasses import dataclass

import numba
import numpy as np

from .errors import ParameterError
from .netgraph import GeoGraph
from .topology import (
    _as_field,
    _basins,
    _cycle_edges,
    _diagram,
    _grid_scan,
    edge_endpoints,
)

__all__ = ["steepest_ascent", "ascend", "MorseGraphResult", "reconstruct"]

_EPS = 1e-12


def steepest_ascent(field) -> np.ndarray:
    """Flat array mapping each vertex to its greatest neighbour, or itself.

    A vertex points to itself when it is a local maximum.
    """
    field = _as_field(field)
    return _grid_scan(field)[0]


def ascend(field, v: int) -> list[int]:
    """Steepest-ascent path from vertex ``v`` to a local maximum (inclusive)."""
    field = _as_field(field)
    if not 0 <= v < field.size:
        raise ParameterError(f"vertex {v} outside a field of {field.size} pixels")
    nxt = steepest_ascent(field)
    path = [int(v)]
    while nxt[path[-1]] != path[-1]:
        path.append(int(nxt[path[-1]]))
    return path


@numba.njit(cache=True, nogil=True)
def _reroot(nxt, basin_a, basin_b, side_a, side_b, nbasins, roots):
    """Ascent forest with cancelled saddle edges spliced in.

    Basins form a forest joined by the cancelled edges ``side_a - side_b``
    (compact basin ids ``basin_a``/``basin_b``).  Walking it outwards from the
    ``roots`` basins, each newly reached basin is entered at one endpoint and
    the ascent path from there to its maximum is reversed; every other
    pointer keeps following the ascent.  Basins are entered once, so the
    ascent array is rewritten in place.
    """
    parent = nxt
    m = basin_a.size
    deg = np.zeros(nbasins + 1, dtype=np.int64)
    for k in range(m):
        deg[basin_a[k] + 1] += 1
        deg[basin_b[k] + 1] += 1
    for i in range(nbasins):
        deg[i + 1] += deg[i]
    fill = deg[:nbasins].copy()
    adj = np.empty(2 * m, dtype=np.int64)
    for k in range(m):
        adj[fill[basin_a[k]]] = k
        fill[basin_a[k]] += 1
        adj[fill[basin_b[k]]] = k
        fill[basin_b[k]] += 1
    seen = np.zeros(nbasins, dtype=np.bool_)
    queue = np.empty(nbasins, dtype=np.int64)
    tail = 0
    for r in roots:
        seen[r] = True
        queue[tail] = r
        tail += 1
    head = 0
    while head < tail:
        b = queue[head]
        head += 1
        for i in range(deg[b], deg[b + 1]):
            k = adj[i]
            if basin_a[k] == b:
                c, prev, x = basin_b[k], side_a[k], side_b[k]
            else:
                c, prev, x = basin_a[k], side_b[k], side_a[k]
            if seen[c]:
                continue
            seen[c] = True
            queue[tail] = c
            tail += 1
            while True:
                step = nxt[x]
                parent[x] = prev
                if step == x:
                    break
                prev = x
                x = step
    return parent


@numba.njit(cache=True, nogil=True)
def _mark_paths(parent, starts):
    marked = np.zeros(parent.size, dtype=np.bool_)
    for s in starts:
        x = s
        while not marked[x]:
            marked[x] = True
            if parent[x] == x:
                break
            x = parent[x]
    return marked


@dataclass(frozen=True)
class MorseGraphResult:
    """Reconstructed graph with the data needed to re-trace its paths.

    ``graph`` vertex ids are linear pixel indices and carry the field value
    as ``density``.  ``parent`` maps every pixel one step along its gradient
    path (roots map to themselves).
    """

    graph: GeoGraph
    selected_saddles: np.ndarray
    delta: float
    width: int
    height: int
    parent: np.ndarray

    def trace(self, v: int) -> list[int]:
        path = [int(v)]
        while self.parent[path[-1]] != path[-1]:
            path.append(int(self.parent[path[-1]]))
        return path

    def paths(self, saddle_edge: int) -> tuple[list[int], list[int]]:
        """The two gradient paths leaving the endpoints of a selected saddle."""
        if saddle_edge not in set(self.selected_saddles.tolist()):
            raise KeyError(saddle_edge)
        a, b = edge_endpoints([saddle_edge], self.width, self.height)
        return self.trace(int(a[0])), self.trace(int(b[0]))

    @property
    def path_map(self) -> dict[int, tuple[list[int], list[int]]]:
        return {int(e): self.paths(int(e)) for e in self.selected_saddles}


def reconstruct(field, delta: float, *, cycles: bool = True, cancel: bool = True) -> MorseGraphResult:
    """Extract the ridge graph of saddles with persistence at least ``delta``.

    Parameters
    ----------
    field : (H, W) array
        Density values, normally in [0, 1].
    delta : float
        Persistence threshold in [0, 1].  Comparisons allow 1e-12 of slack
        for floating-point differences.
    cycles : bool
        Also select loop-closing saddle edges by valley depth.
    cancel : bool
        Cancel max-saddle pairs below ``delta`` before tracing.  With both
        flags off, the result is the plain steepest-ascent ridge graph of
        the max-saddle pairs above ``delta``.
    """
    if not 0.0 <= delta <= 1.0:
        raise ParameterError(f"delta must lie in [0, 1], got {delta}")
    field = _as_field(field)
    height, width = field.shape
    flat = field.ravel()
    scan = _grid_scan(field)
    nxt = scan[0]
    basin, tops = _basins(nxt)
    diagram = _diagram(field, scan, (basin, tops))
    strong = diagram.persistence >= delta - _EPS
    selected = [diagram.saddle_edge[strong]]
    if cycles:
        selected.append(_cycle_edges(field, delta, diagram, scan, _EPS))
    selected = np.unique(np.concatenate(selected))

    if cancel and not np.all(strong):
        weak = ~strong
        sa = diagram.saddle_vertex[weak]
        sb = diagram.other_vertex[weak]
        roots = np.concatenate([diagram.essential, diagram.max_vertex[strong]])
        parent = _reroot(
            nxt,
            basin[sa],
            basin[sb],
            sa,
            sb,
            tops.size,
            basin[roots],
        )
    else:
        parent = nxt

    a, b = edge_endpoints(selected, width, height)
    marked = _mark_paths(parent, np.concatenate([a, b]))
    verts = np.flatnonzero(marked)
    child = verts[parent[verts] != verts]
    ends = [child, parent[child], a, b]
    pos = [np.searchsorted(verts, e) for e in ends]
    edges = np.concatenate(
        [np.stack(pos[:2], axis=1), np.stack(pos[2:], axis=1)]
    )
    xy = np.stack([verts % width, verts // width], axis=1).astype(np.float64)
    graph = GeoGraph(verts, xy, edges, density=flat[verts])
    return MorseGraphResult(graph, selected, float(delta), width, height, parent)
