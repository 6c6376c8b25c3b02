"""Road-tip detection and enhancement.

A tip is a dense pixel whose surrounding window is entered by the road on
one side only.  Enhancing a tip turns it into a strict local maximum, which
forces reconstruction to run a ridge out to it.
"""

from __future__ import annotations

from dataclasses import dataclass

import numba
import numpy as np
from scipy import ndimage

from .errors import ParameterError
from .topology import _as_field

__all__ = [
    "TipSet",
    "detect_tips",
    "enhance_tips",
    "tip_layer",
    "compose",
    "format_tips",
    "parse_tips",
]

# slope inside the enhancement disk, keeps the tip a strict maximum
_RAMP = 1e-6


@dataclass(frozen=True)
class TipSet:
    """Tip pixels as an ``(k, 2)`` array of integer ``(x, y)`` coordinates."""

    points: np.ndarray
    window: int = 21
    t_high: float = 0.5
    t_low: float = 0.3

    def __len__(self) -> int:
        return int(self.points.shape[0])

    @classmethod
    def from_points(cls, points, **params) -> "TipSet":
        pts = np.asarray(points, dtype=np.int64).reshape(-1, 2)
        return cls(pts, **params)


@numba.njit(cache=True, nogil=True)
def _ring_check(field, cand, half, t_low):
    height, width = field.shape
    n_ring = 8 * half
    rx = np.empty(n_ring, dtype=np.int64)
    ry = np.empty(n_ring, dtype=np.int64)
    corner = np.zeros(n_ring, dtype=np.bool_)
    k = 0
    for i in range(-half, half):
        rx[k] = i
        ry[k] = -half
        k += 1
    for i in range(-half, half):
        rx[k] = half
        ry[k] = i
        k += 1
    for i in range(half, -half, -1):
        rx[k] = i
        ry[k] = half
        k += 1
    for i in range(half, -half, -1):
        rx[k] = -half
        ry[k] = i
        k += 1
    for k in range(n_ring):
        corner[k] = abs(rx[k]) == half and abs(ry[k]) == half
    on = np.empty(n_ring, dtype=np.bool_)
    ok = np.zeros(cand.size, dtype=np.bool_)
    dirs = np.zeros((cand.size, 2), dtype=np.float64)
    for c in range(cand.size):
        x0 = cand[c] % width
        y0 = cand[c] // width
        for k in range(n_ring):
            x = min(max(x0 + rx[k], 0), width - 1)
            y = min(max(y0 + ry[k], 0), height - 1)
            on[k] = field[y, x] >= t_low
        runs = 0
        sx = 0.0
        sy = 0.0
        count = 0
        for k in range(n_ring):
            cur = on[k]
            prev = on[k - 1]
            # an off corner does not separate its two diagonal neighbours
            if not cur and corner[k] and on[k - 1] and on[(k + 1) % n_ring]:
                cur = True
            if not prev and corner[k - 1] and on[k - 2] and on[k]:
                prev = True
            if cur and not prev:
                runs += 1
            if on[k]:
                sx += rx[k]
                sy += ry[k]
                count += 1
        if runs == 1:
            ok[c] = True
            dirs[c, 0] = sx / count
            dirs[c, 1] = sy / count
    return ok, dirs


def detect_tips(field, window: int = 21, t_high: float = 0.5, t_low: float = 0.3) -> TipSet:
    """Find road endpoints in a density field.

    A pixel is a candidate when its value is at least ``t_high`` and the
    pixels at or above ``t_low`` on the boundary ring of the centred
    ``window`` x ``window`` box form exactly one 8-connected run.  Ring
    coordinates are clamped to the image, so a road leaving the frame still
    counts as crossing the ring there.  Each 8-connected cluster of
    candidates keeps the single pixel furthest from the road, i.e. the
    extreme candidate opposite the mean ring direction of the cluster.
    """
    if window < 3 or window % 2 == 0:
        raise ParameterError(f"window must be odd and >= 3, got {window}")
    if not 0.0 <= t_low <= t_high <= 1.0:
        raise ParameterError("thresholds must satisfy 0 <= t_low <= t_high <= 1")
    field = _as_field(field)
    params = dict(window=window, t_high=t_high, t_low=t_low)
    flat = field.ravel()
    cand = np.flatnonzero(flat >= t_high)
    if cand.size == 0:
        return TipSet(np.empty((0, 2), dtype=np.int64), **params)
    ok, dirs = _ring_check(field, cand, window // 2, t_low)
    cand, dirs = cand[ok], dirs[ok]
    if cand.size == 0:
        return TipSet(np.empty((0, 2), dtype=np.int64), **params)
    mask = np.zeros(field.size, dtype=bool)
    mask[cand] = True
    labels, n = ndimage.label(mask.reshape(field.shape), structure=np.ones((3, 3)))
    lab = labels.ravel()[cand]
    width = field.shape[1]
    xy = np.stack([cand % width, cand // width], axis=1)
    tips = []
    for c in range(1, n + 1):
        members = np.flatnonzero(lab == c)
        d = dirs[members].mean(axis=0)
        proj = xy[members] @ d
        # smallest projection, then highest value, then lowest index
        best = np.lexsort((cand[members], -flat[cand[members]], np.round(proj, 9)))[0]
        tips.append(xy[members[best]])
    pts = np.array(sorted(map(tuple, tips), key=lambda p: (p[1], p[0])), dtype=np.int64)
    return TipSet(pts.reshape(-1, 2), **params)


def _disk(shape, tips: TipSet, radius: float) -> np.ndarray:
    """Per-pixel enhancement value: ``1 - eps * dist`` inside any tip disk, else -inf."""
    height, width = shape
    out = np.full(shape, -np.inf)
    r = int(np.floor(radius))
    dy, dx = np.mgrid[-r : r + 1, -r : r + 1]
    dist = np.hypot(dx, dy)
    inside = dist <= radius + 1e-12
    dx, dy, dist = dx[inside], dy[inside], dist[inside]
    for x, y in tips.points:
        xs, ys = x + dx, y + dy
        keep = (xs >= 0) & (xs < width) & (ys >= 0) & (ys < height)
        val = 1.0 - _RAMP * dist[keep]
        np.maximum.at(out, (ys[keep], xs[keep]), val)
    return out


def enhance_tips(field, tips: TipSet, radius: float = 2.0) -> np.ndarray:
    """Raise the disk of ``radius`` around every tip to (almost) 1.

    The tip pixel itself becomes exactly 1.0; the rest of the disk gets
    ``1 - 1e-6 * distance`` so the tip is a strict local maximum even next
    to other saturated pixels.  Values never decrease.
    """
    if radius < 0:
        raise ParameterError("radius must be >= 0")
    field = _as_field(field)
    if len(tips) == 0:
        return field.copy()
    return np.maximum(field, _disk(field.shape, tips, radius))


def tip_layer(shape, tips: TipSet, radius: float = 2.0) -> np.ndarray:
    """Additive enhancement layer: the tip disks on a zero background."""
    if radius < 0:
        raise ParameterError("radius must be >= 0")
    return np.maximum(0.0, _disk(tuple(shape), tips, radius))


def compose(base, layers=()) -> np.ndarray:
    """Pixel-wise sum of ``base`` and ``layers`` clamped to [0, 1]."""
    base = _as_field(base)
    out = base.copy()
    for layer in layers:
        layer = np.asarray(layer, dtype=np.float64)
        if layer.shape != base.shape:
            raise ParameterError(f"layer shape {layer.shape} differs from {base.shape}")
        out += layer
    return np.clip(out, 0.0, 1.0)


def format_tips(tips: TipSet) -> str:
    return "".join(f"{x} {y}\n" for x, y in tips.points)


def parse_tips(text: str, **params) -> TipSet:
    rows = [line.split() for line in text.splitlines() if line.strip()]
    try:
        pts = [(int(a), int(b)) for a, b in rows]
    except ValueError:
        raise ParameterError("tip lines must be 'x y' integer pairs") from None
    return TipSet.from_points(pts, **params)
