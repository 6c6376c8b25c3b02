"""Implicit triangulation of a pixel grid and 0-dimensional persistence.

The grid is triangulated Freudenthal-style: every unit cell with corners
``(x, y), (x+1, y), (x, y+1), (x+1, y+1)`` is split by the diagonal joining
``(x, y+1)`` and ``(x+1, y)``.  Every vertex therefore has up to six
neighbours.  Edge ids are laid out in three blocks::

    horizontal  (x, y)-(x+1, y)    y*(W-1) + x
    vertical    (x, y)-(x, y+1)    nh + y*W + x
    diagonal    (x, y+1)-(x+1, y)  nh + nv + y*(W-1) + x

with ``nh = (W-1)*H`` and ``nv = W*(H-1)``.  Cell ``(x, y)`` holds the two
triangles ``2*(y*(W-1) + x)`` (upper-left) and ``2*(y*(W-1) + x) + 1``.

Vertices are totally ordered by ``(value, linear index)``.  The super-level
filtration adds vertices in decreasing order; an edge enters with its lower
endpoint, a triangle with its lowest vertex.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator, NamedTuple

import numba
import numpy as np

__all__ = [
    "NEIGHBOR_OFFSETS",
    "num_edges",
    "edge_id",
    "edge_endpoints",
    "vertex_rank",
    "neighbor_shifts",
    "local_maxima",
    "PersistencePair",
    "Diagram",
    "CyclePair",
    "CycleDiagram",
    "compute_persistence",
    "compute_cycle_persistence",
    "format_diagram",
]

# (dx, dy) of the six 1-skeleton neighbours
NEIGHBOR_OFFSETS = ((1, 0), (-1, 0), (0, 1), (0, -1), (1, -1), (-1, 1))


def num_edges(width: int, height: int) -> int:
    return (width - 1) * height + width * (height - 1) + (width - 1) * (height - 1)


def _as_field(field) -> np.ndarray:
    field = np.asarray(field, dtype=np.float64)
    if field.ndim == 1:
        field = field[None, :]
    if field.ndim != 2 or field.size == 0:
        raise ValueError("field must be a non-empty 2D array")
    return field


@numba.njit(cache=True)
def _edge_id(u, v, width, height):
    xu, yu = u % width, u // width
    xv, yv = v % width, v // width
    if yu == yv:
        x = min(xu, xv)
        return yu * (width - 1) + x
    if xu == xv:
        y = min(yu, yv)
        return (width - 1) * height + y * width + xu
    # diagonal: lower-left (x, y+1) to upper-right (x+1, y)
    x = min(xu, xv)
    y = min(yu, yv)
    return (width - 1) * height + width * (height - 1) + y * (width - 1) + x


def edge_id(u: int, v: int, width: int, height: int) -> int:
    """Id of the grid edge joining vertices ``u`` and ``v``."""
    xu, yu, xv, yv = u % width, u // width, v % width, v // width
    d = (xv - xu, yv - yu)
    if d not in NEIGHBOR_OFFSETS:
        raise ValueError(f"vertices {u} and {v} are not adjacent")
    return int(_edge_id(u, v, width, height))


def edge_endpoints(eids, width: int, height: int):
    """Endpoints ``(a, b)`` of edge ids, ``a < b`` elementwise."""
    eids = np.asarray(eids, dtype=np.int64)
    nh = (width - 1) * height
    nv = width * (height - 1)
    a = np.empty_like(eids)
    b = np.empty_like(eids)
    h = eids < nh
    if np.any(h) and width > 1:
        y, x = np.divmod(eids[h], width - 1)
        a[h] = y * width + x
        b[h] = a[h] + 1
    vm = (eids >= nh) & (eids < nh + nv)
    if np.any(vm):
        k = eids[vm] - nh
        a[vm] = k
        b[vm] = k + width
    dm = eids >= nh + nv
    if np.any(dm):
        y, x = np.divmod(eids[dm] - nh - nv, width - 1)
        a[dm] = y * width + x + 1
        b[dm] = (y + 1) * width + x
    return a, b


def vertex_rank(field) -> np.ndarray:
    """Position of every vertex in the ascending total order, as a 2D array."""
    field = _as_field(field)
    return _sorted_order(field)[2].reshape(field.shape)


def neighbor_shifts(arr: np.ndarray, fill):
    """Yield ``(dx, dy, shifted)`` where ``shifted[y, x] = arr[y+dy, x+dx]``.

    Out-of-grid positions receive ``fill``.
    """
    height, width = arr.shape
    for dx, dy in NEIGHBOR_OFFSETS:
        out = np.full_like(arr, fill)
        ys = slice(max(0, -dy), height - max(0, dy))
        xs = slice(max(0, -dx), width - max(0, dx))
        ys_src = slice(max(0, dy), height + min(0, dy))
        xs_src = slice(max(0, dx), width + min(0, dx))
        out[ys, xs] = arr[ys_src, xs_src]
        yield dx, dy, out


def local_maxima(field) -> np.ndarray:
    """Linear indices of vertices greater than all their neighbours."""
    rank = vertex_rank(field)
    is_max = np.ones(rank.shape, dtype=bool)
    for _, _, nb in neighbor_shifts(rank, -1):
        is_max &= nb < rank
    return np.flatnonzero(is_max.ravel())


class PersistencePair(NamedTuple):
    max_vertex: int
    saddle_edge: int
    birth: float
    death: float

    @property
    def persistence(self) -> float:
        return self.birth - self.death


@dataclass(frozen=True)
class Diagram:
    """Max-saddle pairs of the super-level filtration.

    Arrays are parallel and sorted by decreasing persistence, ties by edge
    id.  ``saddle_vertex``/``other_vertex`` are the saddle edge endpoints
    lying in the dying and the surviving component respectively.
    """

    width: int
    height: int
    max_vertex: np.ndarray
    saddle_edge: np.ndarray
    birth: np.ndarray
    death: np.ndarray
    saddle_vertex: np.ndarray
    other_vertex: np.ndarray
    essential: np.ndarray

    @property
    def persistence(self) -> np.ndarray:
        return self.birth - self.death

    def __len__(self) -> int:
        return int(self.max_vertex.size)

    def __iter__(self) -> Iterator[PersistencePair]:
        for m, e, b, d in zip(self.max_vertex, self.saddle_edge, self.birth, self.death):
            yield PersistencePair(int(m), int(e), float(b), float(d))


@numba.njit(cache=True)
def _find(uf, x):
    # column 0 of the union-find table holds the parent, halved on the way up
    while uf[x, 0] != x:
        uf[x, 0] = uf[uf[x, 0], 0]
        x = uf[x, 0]
    return x


@numba.njit(cache=True)
def _root(parent, x):
    while parent[x] != x:
        parent[x] = parent[parent[x]]
        x = parent[x]
    return x


# the six neighbours in angular order; consecutive entries span a triangle
_RING_DX = (1, 0, -1, -1, 0, 1)
_RING_DY = (0, 1, 1, 0, -1, -1)


@numba.njit(cache=True)
def _after(flat, a, b):
    """Whether vertex ``a`` follows ``b`` in the (value, index) order."""
    return flat[a] > flat[b] or (flat[a] == flat[b] and a > b)


@numba.njit(cache=True, nogil=True)
def _basin_kernel(nxt, label, roots):
    n = nxt.size
    nroots = 0
    for v in range(n):
        if label[v] >= 0:
            continue
        x = v
        while label[x] < 0 and nxt[x] != x:
            x = nxt[x]
        if label[x] < 0:
            label[x] = nroots
            roots[nroots] = x
            nroots += 1
        c = label[x]
        # second walk along the same path writes the label
        x = v
        while label[x] < 0:
            label[x] = c
            x = nxt[x]
    return nroots


def _basins(nxt):
    """Compact basin id of every vertex in the forest ``nxt``, and the roots.

    One pass in index order; ids are handed out as roots are met.
    """
    # buffers come from numpy, which backs large ones with huge pages
    label = np.full(nxt.size, -1, dtype=np.int32)
    roots = np.empty(nxt.size, dtype=np.int64)
    return label, roots[: _basin_kernel(nxt, label, roots)].copy()


def _arc_table():
    # number of runs of set bits in a cyclic 6-bit mask
    table = np.zeros(64, dtype=np.int64)
    for mask in range(64):
        bits = [(mask >> j) & 1 for j in range(6)]
        table[mask] = sum(bits[j] and not bits[j - 1] for j in range(6))
    return table


_ARCS = _arc_table()


@numba.njit(cache=True, nogil=True)
def _scan(flat, width, height, arcs, up, down, split_up, split_down):
    """One pass over the grid collecting everything the sweeps need.

    Returns the greatest and the least neighbour of every vertex (itself at
    an extremum), then the vertices whose upper, respectively lower, link
    splits into two or more arcs, in index order.  Off-grid slots count as
    lower.  Components can only merge at split vertices, so the sweeps visit
    nothing else.
    """
    nu = 0
    nd = 0
    shift = np.empty(6, dtype=np.int64)
    for j in range(6):
        shift[j] = _RING_DY[j] * width + _RING_DX[j]
    for y in range(height):
        border = y == 0 or y == height - 1
        for x in range(width):
            v = y * width + x
            hi = v
            lo = v
            mask = 0
            if border or x == 0 or x == width - 1:
                for j in range(6):
                    xx = x + _RING_DX[j]
                    yy = y + _RING_DY[j]
                    if 0 <= xx < width and 0 <= yy < height:
                        u = v + shift[j]
                        if _after(flat, u, v):
                            mask |= 1 << j
                            if _after(flat, u, hi):
                                hi = u
                        elif _after(flat, lo, u):
                            lo = u
            else:
                fv = flat[v]
                fhi = fv
                flo = fv
                for j in range(6):
                    u = v + shift[j]
                    fu = flat[u]
                    if fu > fv or (fu == fv and u > v):
                        mask |= 1 << j
                        if fu > fhi or (fu == fhi and u > hi):
                            hi = u
                            fhi = fu
                    elif fu < flo or (fu == flo and u < lo):
                        lo = u
                        flo = fu
            up[v] = hi
            down[v] = lo
            if arcs[mask] >= 2:
                split_up[nu] = v
                nu += 1
            if arcs[mask ^ 63] >= 2:
                split_down[nd] = v
                nd += 1
    return nu, nd


@numba.njit(cache=True, nogil=True)
def _max_saddle_pairs(flat, width, height, basin, tops, saddles):
    # saddles arrive in increasing order and are swept backwards; union-find
    # runs over basins only, each root being the basin of the eldest maximum
    parent = np.arange(tops.size)
    cap = 2 * saddles.size
    out_max = np.empty(cap, dtype=np.int64)
    out_edge = np.empty(cap, dtype=np.int64)
    out_side = np.empty(cap, dtype=np.int64)
    out_other = np.empty(cap, dtype=np.int64)
    npairs = 0
    nb = np.empty(6, dtype=np.int64)
    for k in range(saddles.size - 1, -1, -1):
        v = saddles[k]
        x = v % width
        y = v // width
        m = 0
        for j in range(6):
            xx = x + _RING_DX[j]
            yy = y + _RING_DY[j]
            if 0 <= xx < width and 0 <= yy < height:
                u = yy * width + xx
                if _after(flat, u, v):
                    # insertion keeps nb in decreasing order
                    i = m
                    while i > 0 and _after(flat, u, nb[i - 1]):
                        nb[i] = nb[i - 1]
                        i -= 1
                    nb[i] = u
                    m += 1
        # v belongs to the component of its greatest neighbour
        rv = _root(parent, basin[nb[0]])
        for j in range(1, m):
            u = nb[j]
            ru = _root(parent, basin[u])
            if ru == rv:
                continue
            if _after(flat, tops[ru], tops[rv]):
                out_max[npairs] = tops[rv]
                out_side[npairs] = v
                out_other[npairs] = u
                parent[rv] = ru
                rv = ru
            else:
                out_max[npairs] = tops[ru]
                out_side[npairs] = u
                out_other[npairs] = v
                parent[ru] = rv
            out_edge[npairs] = _edge_id(u, v, width, height)
            npairs += 1
    roots = 0
    for c in range(tops.size):
        if parent[c] == c:
            roots += 1
    essential = np.empty(roots, dtype=np.int64)
    i = 0
    for c in range(tops.size):
        if parent[c] == c:
            essential[i] = tops[c]
            i += 1
    return out_max[:npairs], out_edge[:npairs], out_side[:npairs], out_other[:npairs], essential


def _sorted_order(field: np.ndarray):
    flat = field.ravel()
    # a stable sort breaks value ties by linear index
    order = np.argsort(flat, kind="stable")
    rank = np.empty(flat.size, dtype=np.int32 if flat.size < 2**31 else np.int64)
    rank[order] = np.arange(flat.size)
    return flat, order, rank


def _grid_scan(field: np.ndarray):
    height, width = field.shape
    n = field.size
    if n >= 2**31:
        raise ValueError("fields above 2**31 pixels are not supported")
    # int32 halves the memory traffic of the passes that follow; buffers
    # come from numpy, which backs large ones with huge pages
    up = np.empty(n, dtype=np.int32)
    down = np.empty(n, dtype=np.int32)
    split_up = np.empty(n, dtype=np.int64)
    split_down = np.empty(n, dtype=np.int64)
    nu, nd = _scan(field.ravel(), width, height, _ARCS, up, down, split_up, split_down)
    return up, down, split_up[:nu].copy(), split_down[:nd].copy()


def _in_order(flat, vertices):
    # vertices come in index order, so a stable sort breaks ties by index
    return vertices[np.argsort(flat[vertices], kind="stable")]


def compute_persistence(field) -> Diagram:
    """0-dimensional persistence of the super-level filtration (elder rule).

    Every vertex flows by steepest ascent into the basin of a maximum.  Basins
    can only merge at vertices whose upper link splits into several arcs, so
    those are swept in decreasing order: at each one the upper neighbours are
    visited from the greatest down, and every neighbour in a different
    component merges the two, killing the component with the lower maximum.
    Linear passes plus a sort of the split vertices.
    """
    return _diagram(_as_field(field))


def _diagram(field: np.ndarray, scan=None, basins=None) -> Diagram:
    height, width = field.shape
    flat = field.ravel()
    if scan is None:
        scan = _grid_scan(field)
    if basins is None:
        basins = _basins(scan[0])
    saddles = _in_order(flat, scan[2])
    mx, edge, side, other, essential = _max_saddle_pairs(flat, width, height, *basins, saddles)
    birth = flat[mx]
    death = np.minimum(flat[side], flat[other])
    idx = np.lexsort((edge, -(birth - death)))
    ess = essential[np.lexsort((-essential, -flat[essential]))]
    return Diagram(
        width=width,
        height=height,
        max_vertex=mx[idx],
        saddle_edge=edge[idx],
        birth=birth[idx],
        death=death[idx],
        saddle_vertex=side[idx],
        other_vertex=other[idx],
        essential=ess,
    )


# --------------------------------------------------------------------------
# Cycle saddles: edges that close a loop in the super-level set, paired with
# the triangle (valley minimum) that fills the loop.  Computed as 0-dim
# persistence of the dual graph swept in increasing order, with the outer
# face present from the start.
# --------------------------------------------------------------------------


class CyclePair(NamedTuple):
    saddle_edge: int
    min_triangle: int
    birth: float
    death: float

    @property
    def persistence(self) -> float:
        return self.birth - self.death


@dataclass(frozen=True)
class CycleDiagram:
    """Saddle-minimum pairs, sorted by decreasing persistence then edge id."""

    width: int
    height: int
    saddle_edge: np.ndarray
    min_triangle: np.ndarray
    birth: np.ndarray
    death: np.ndarray

    @property
    def persistence(self) -> np.ndarray:
        return self.birth - self.death

    def __len__(self) -> int:
        return int(self.saddle_edge.size)

    def __iter__(self) -> Iterator[CyclePair]:
        for e, t, b, d in zip(self.saddle_edge, self.min_triangle, self.birth, self.death):
            yield CyclePair(int(e), int(t), float(b), float(d))


@numba.njit(cache=True, nogil=True)
def _cycle_pairs(rank, order, width, height):
    n = width * height
    cw = width - 1
    ntri = 2 * cw * (height - 1) if width > 1 and height > 1 else 0
    outer = ntri
    # int32 rows of (parent, eldest triangle, birth of the eldest, lowest vertex);
    # a triangle's row is filled when its lowest vertex is swept
    uf = np.empty((ntri + 1, 4), dtype=np.int32)
    uf[outer, 0] = outer
    uf[outer, 1] = outer
    uf[outer, 2] = -1
    uf[outer, 3] = -1
    out_edge = np.empty(ntri + 1, dtype=np.int64)
    out_tri = np.empty(ntri + 1, dtype=np.int64)
    out_v = np.empty(ntri + 1, dtype=np.int64)
    npairs = 0
    clock = 0
    tri_id = np.empty(6, dtype=np.int64)
    tri_hi = np.empty(6, dtype=np.int64)
    tri_lo = np.empty(6, dtype=np.int64)
    nbr = np.empty(6, dtype=np.int64)
    dxs = (1, -1, 0, 0, 1, -1)
    dys = (0, 0, 1, -1, -1, 1)
    for k in range(n):
        v = order[k]
        x = v % width
        y = v // width
        rv = rank[v]
        # lower-star triangles of v, reverse filtration order = ascending (hi, lo)
        m = 0
        for j in range(6):
            t = 0
            a = 0
            b = 0
            if j == 0:
                ok = x < width - 1 and y < height - 1
                if ok:
                    t = 2 * (y * cw + x)
                    a = v + 1
                    b = v + width
            elif j == 1:
                ok = x >= 1 and y < height - 1
                if ok:
                    t = 2 * (y * cw + x - 1)
                    a = v - 1
                    b = v - 1 + width
            elif j == 2:
                ok = x >= 1 and y < height - 1
                if ok:
                    t = 2 * (y * cw + x - 1) + 1
                    a = v - 1 + width
                    b = v + width
            elif j == 3:
                ok = x < width - 1 and y >= 1
                if ok:
                    t = 2 * ((y - 1) * cw + x)
                    a = v - width
                    b = v - width + 1
            elif j == 4:
                ok = x < width - 1 and y >= 1
                if ok:
                    t = 2 * ((y - 1) * cw + x) + 1
                    a = v - width + 1
                    b = v + 1
            else:
                ok = x >= 1 and y >= 1
                if ok:
                    t = 2 * ((y - 1) * cw + x - 1) + 1
                    a = v - width
                    b = v - 1
            if not ok:
                continue
            ra = rank[a]
            rb = rank[b]
            if ra < rv or rb < rv:
                continue
            hi = max(ra, rb)
            lo = min(ra, rb)
            i = m
            while i > 0 and (tri_hi[i - 1] > hi or (tri_hi[i - 1] == hi and tri_lo[i - 1] > lo)):
                tri_id[i] = tri_id[i - 1]
                tri_hi[i] = tri_hi[i - 1]
                tri_lo[i] = tri_lo[i - 1]
                i -= 1
            tri_id[i] = t
            tri_hi[i] = hi
            tri_lo[i] = lo
            m += 1
        for i in range(m):
            t = tri_id[i]
            uf[t, 0] = t
            uf[t, 1] = t
            uf[t, 2] = clock
            uf[t, 3] = v
            clock += 1
        # lower-star edges of v, ascending rank of the other endpoint
        m = 0
        for j in range(6):
            xx = x + dxs[j]
            yy = y + dys[j]
            if 0 <= xx < width and 0 <= yy < height:
                u = yy * width + xx
                if rank[u] > rv:
                    i = m
                    while i > 0 and rank[nbr[i - 1]] > rank[u]:
                        nbr[i] = nbr[i - 1]
                        i -= 1
                    nbr[i] = u
                    m += 1
        for i in range(m):
            u = nbr[i]
            e = _edge_id(u, v, width, height)
            # the two faces of e
            xa = min(u % width, x)
            ya = min(u // width, y)
            if u // width == y:
                f1 = 2 * (y * cw + xa) if y < height - 1 else outer
                f2 = 2 * ((y - 1) * cw + xa) + 1 if y >= 1 else outer
            elif u % width == x:
                f1 = 2 * (ya * cw + x) if x < width - 1 else outer
                f2 = 2 * (ya * cw + x - 1) + 1 if x >= 1 else outer
            else:
                f1 = 2 * (ya * cw + xa)
                f2 = f1 + 1
            r1 = _find(uf, f1)
            r2 = _find(uf, f2)
            if r1 == r2:
                continue
            if uf[r1, 2] > uf[r2, 2]:
                r1, r2 = r2, r1
            # r1 holds the elder class; the younger one dies here
            out_edge[npairs] = e
            out_tri[npairs] = uf[r2, 1]
            out_v[npairs] = v
            npairs += 1
            uf[r2, 0] = r1
    return out_edge[:npairs], out_tri[:npairs], out_v[:npairs], uf[:, 3].astype(np.int64)


@numba.njit(cache=True, nogil=True)
def _cycle_merges(flat, width, height, basin, bottoms, saddles):
    """Loop-closing edges with positive valley depth, and that depth.

    A loop of the super-level set closes exactly when two sub-level
    components (the outer face counting as the eldest) meet, so this is
    the sub-level elder rule over descending basins.  ``saddles`` are the
    vertices with a split lower link in increasing order.  At each one, every
    run of upper neighbours joins the components on its two sides once its
    greatest edge is in, so runs are merged in that order.  Zero-depth pairs
    of the full sweep are not reported.
    """
    outer = bottoms.size
    parent = np.arange(outer + 1)
    for c in range(outer):
        x = bottoms[c] % width
        y = bottoms[c] // width
        if x == 0 or y == 0 or x == width - 1 or y == height - 1:
            parent[c] = outer
    cap = 3 * saddles.size
    out_edge = np.empty(cap, dtype=np.int64)
    out_depth = np.empty(cap, dtype=np.float64)
    npairs = 0
    upper = np.empty(6, dtype=np.bool_)
    slot = np.empty(6, dtype=np.int64)
    arc_top = np.empty(3, dtype=np.int64)
    arc_left = np.empty(3, dtype=np.int64)
    arc_right = np.empty(3, dtype=np.int64)
    for k in range(saddles.size):
        v = saddles[k]
        x = v % width
        y = v // width
        start = -1
        for j in range(6):
            xx = x + _RING_DX[j]
            yy = y + _RING_DY[j]
            if 0 <= xx < width and 0 <= yy < height:
                u = yy * width + xx
                upper[j] = _after(flat, u, v)
                slot[j] = u if upper[j] else basin[u]
            else:
                upper[j] = False
                slot[j] = outer
            if not upper[j]:
                start = j
        narcs = 0
        inarc = False
        left = 0
        top = 0
        for s in range(1, 7):
            j = (start + s) % 6
            if upper[j]:
                if not inarc:
                    inarc = True
                    left = slot[(start + s - 1) % 6]
                    top = slot[j]
                elif _after(flat, slot[j], top):
                    top = slot[j]
            elif inarc:
                inarc = False
                i = narcs
                while i > 0 and _after(flat, arc_top[i - 1], top):
                    arc_top[i] = arc_top[i - 1]
                    arc_left[i] = arc_left[i - 1]
                    arc_right[i] = arc_right[i - 1]
                    i -= 1
                arc_top[i] = top
                arc_left[i] = left
                arc_right[i] = slot[j]
                narcs += 1
        for i in range(narcs):
            a = _root(parent, arc_left[i])
            b = _root(parent, arc_right[i])
            if a == b:
                continue
            # each root is the basin of its component's minimum; the
            # later-born one dies
            if a == outer or (b != outer and _after(flat, bottoms[b], bottoms[a])):
                a, b = b, a
            out_edge[npairs] = _edge_id(v, arc_top[i], width, height)
            out_depth[npairs] = flat[v] - flat[bottoms[a]]
            npairs += 1
            parent[a] = b
    return out_edge[:npairs], out_depth[:npairs]


@numba.njit(cache=True, nogil=True)
def _flow_edges(nxt, width, height):
    # ids of the edges v -> nxt[v] for every non-extremal v
    out = np.empty(nxt.size, dtype=np.int64)
    m = 0
    for v in range(nxt.size):
        if nxt[v] != v:
            out[m] = _edge_id(v, nxt[v], width, height)
            m += 1
    return out[:m]


def _cycle_edges(field: np.ndarray, delta: float, diagram: Diagram, scan, eps: float):
    """Loop-closing edges whose valley depth is at least ``delta - eps``."""
    height, width = field.shape
    if width < 2 or height < 2:
        return np.empty(0, dtype=np.int64)
    if delta <= eps:
        # every loop-closing edge qualifies: all edges that neither merge
        # super-level components nor extend one along the ascent
        keep = np.ones(num_edges(width, height), dtype=bool)
        keep[diagram.saddle_edge] = False
        keep[_flow_edges(scan[0], width, height)] = False
        return np.flatnonzero(keep)
    flat = field.ravel()
    basin, bottoms = _basins(scan[1])
    saddles = _in_order(flat, scan[3])
    edge, depth = _cycle_merges(flat, width, height, basin, bottoms, saddles)
    return edge[depth >= delta - eps]


def compute_cycle_persistence(field) -> CycleDiagram:
    """Pair every loop-closing edge with the valley triangle that fills it.

    ``birth`` is the edge value (its lower endpoint) and ``death`` the value
    of the triangle's lowest vertex.  The outer face never dies, so every
    triangle is paired exactly once.
    """
    field = _as_field(field)
    height, width = field.shape
    flat, order, rank = _sorted_order(field)
    edge, tri, vtx, lowest = _cycle_pairs(rank, order, width, height)
    birth = flat[vtx]
    death = flat[lowest[tri]]
    idx = np.lexsort((edge, -(birth - death)))
    return CycleDiagram(
        width=width,
        height=height,
        saddle_edge=edge[idx],
        min_triangle=tri[idx],
        birth=birth[idx],
        death=death[idx],
    )


def format_diagram(diagram: Diagram) -> str:
    """Diagnostic dump, one ``maxVertex saddleEdge birth death`` line per pair."""
    lines = [f"{p.max_vertex} {p.saddle_edge} {p.birth!r} {p.death!r}" for p in diagram]
    return "\n".join(lines) + ("\n" if lines else "")
