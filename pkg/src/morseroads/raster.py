"""Scalar raster I/O and preprocessing.

A density field is a 2D ``float64`` array of shape ``(height, width)`` with
values in [0, 1]; pixel ``(x, y)`` lives at ``field[y, x]`` and has linear
index ``y * width + x``.  RGB rasters are ``(height, width, 3)`` arrays of raw
samples.

Supported files:

* portable graymap / pixmap, ASCII (P2/P3) and binary (P5/P6), 8 or 16 bit;
* ``.f32grid``: 16-byte header (``b"F32GRID\\0"``, uint32 width, uint32
  height, all little-endian) followed by row-major little-endian float32.
"""

from __future__ import annotations

import os
import struct
from pathlib import Path

import numpy as np
from scipy import ndimage

from .errors import FormatError

__all__ = [
    "F32_MAGIC",
    "normalize",
    "grayscale",
    "gaussian_blur",
    "preprocess",
    "load_density",
    "load_rgb",
    "save_density",
    "save_rgb",
    "save_mask",
    "load_mask",
]

F32_MAGIC = b"F32GRID\0"
LUMA = (0.299, 0.587, 0.114)


def normalize(values: np.ndarray) -> np.ndarray:
    """Affinely map values onto [0, 1]; a constant input maps to all zeros."""
    arr = np.asarray(values, dtype=np.float64)
    if arr.size == 0:
        return arr.copy()
    lo = arr.min()
    hi = arr.max()
    if hi <= lo:
        return np.zeros_like(arr)
    return (arr - lo) / (hi - lo)


def grayscale(img: np.ndarray) -> np.ndarray:
    """ITU-601 luminance of an ``(H, W, 3)`` raster (no rescaling)."""
    img = np.asarray(img, dtype=np.float64)
    if img.ndim == 2:
        return img
    if img.ndim != 3 or img.shape[2] != 3:
        raise ValueError(f"expected (H, W, 3) raster, got shape {img.shape}")
    return LUMA[0] * img[..., 0] + LUMA[1] * img[..., 1] + LUMA[2] * img[..., 2]


def gaussian_blur(field: np.ndarray, sigma: float) -> np.ndarray:
    """Gaussian blur truncated at 3 sigma with edge clamping."""
    if sigma < 0:
        raise ValueError("sigma must be >= 0")
    field = np.asarray(field, dtype=np.float64)
    if sigma == 0:
        return field.copy()
    return ndimage.gaussian_filter(field, sigma=sigma, mode="nearest", truncate=3.0)


def preprocess(img: np.ndarray, sigma: float = 2.0) -> np.ndarray:
    """Grayscale + Gaussian blur + renormalisation of an RGB (or gray) raster.

    Used to bootstrap the label-free loop from raw imagery.
    """
    gray = normalize(grayscale(img))
    return normalize(gaussian_blur(gray, sigma))


# --------------------------------------------------------------------------
# Netpbm
# --------------------------------------------------------------------------

def _read_pnm(data: bytes):
    """Parse a netpbm file; returns (magic, samples array, maxval)."""
    if len(data) < 2 or data[:1] != b"P" or data[1:2] not in b"2356":
        raise FormatError("not a P2/P3/P5/P6 netpbm file")
    magic = data[:2].decode()
    pos = 2
    tokens: list[int] = []
    n_header = 3
    while len(tokens) < n_header:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if pos >= len(data):
            raise FormatError("truncated header")
        if data[pos : pos + 1] == b"#":
            while pos < len(data) and data[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace() and data[pos : pos + 1] != b"#":
            pos += 1
        try:
            tokens.append(int(data[start:pos]))
        except ValueError:
            raise FormatError(f"bad header token {data[start:pos]!r}") from None
    width, height, maxval = tokens
    if width <= 0 or height <= 0:
        raise FormatError("zero-area image")
    if not 0 < maxval < 65536:
        raise FormatError(f"invalid maxval {maxval}")
    channels = 3 if magic in ("P3", "P6") else 1
    count = width * height * channels
    if magic in ("P5", "P6"):
        # exactly one whitespace byte separates header and raster
        pos += 1
        dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
        need = count * dtype.itemsize
        if len(data) - pos < need:
            raise FormatError("truncated raster data")
        samples = np.frombuffer(data, dtype=dtype, count=count, offset=pos).astype(np.int64)
    else:
        body = data[pos:].split()
        if len(body) < count:
            raise FormatError("truncated raster data")
        try:
            samples = np.array([int(t) for t in body[:count]], dtype=np.int64)
        except ValueError:
            raise FormatError("non-integer sample") from None
    if samples.size and samples.max() > maxval:
        raise FormatError("sample exceeds maxval")
    shape = (height, width, 3) if channels == 3 else (height, width)
    return magic, samples.reshape(shape), maxval


def _read_f32grid(data: bytes) -> np.ndarray:
    if len(data) < 16 or data[:8] != F32_MAGIC:
        raise FormatError("bad f32grid header")
    width, height = struct.unpack("<II", data[8:16])
    if width == 0 or height == 0:
        raise FormatError("zero-area image")
    need = 16 + 4 * width * height
    if len(data) < need:
        raise FormatError("truncated raster data")
    return np.frombuffer(data, dtype="<f4", count=width * height, offset=16).reshape(height, width)


def _read_bytes(path) -> bytes:
    with open(path, "rb") as fh:
        data = fh.read()
    if not data:
        raise FormatError(f"{path}: empty file")
    return data


def load_density(path) -> np.ndarray:
    """Load a raster file as a density field scaled to [0, 1].

    Netpbm samples are divided by ``maxval`` (pixmaps are reduced to their
    luminance first).  ``.f32grid`` values are clipped to [0, 1].
    """
    data = _read_bytes(path)
    if data[:8] == F32_MAGIC:
        return np.clip(_read_f32grid(data).astype(np.float64), 0.0, 1.0)
    magic, samples, maxval = _read_pnm(data)
    return grayscale(samples) / float(maxval)


def load_rgb(path) -> np.ndarray:
    """Load a pixmap (or graymap, replicated to 3 planes) as raw float samples."""
    data = _read_bytes(path)
    if data[:8] == F32_MAGIC:
        g = _read_f32grid(data).astype(np.float64)
        return np.repeat(g[..., None], 3, axis=2)
    magic, samples, _ = _read_pnm(data)
    samples = samples.astype(np.float64)
    if samples.ndim == 2:
        samples = np.repeat(samples[..., None], 3, axis=2)
    return samples


def _atomic_write(path, payload: bytes) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(payload)
    os.replace(tmp, path)


def save_density(field: np.ndarray, path, fmt: str | None = None) -> None:
    """Write a field as an 8-bit P5 graymap or a lossless ``.f32grid``.

    The format is taken from ``fmt`` (``"pgm"`` or ``"f32grid"``) or else
    from the file suffix.
    """
    field = np.asarray(field, dtype=np.float64)
    if field.ndim != 2 or field.size == 0:
        raise ValueError("field must be a non-empty 2D array")
    if fmt is None:
        fmt = "f32grid" if str(path).endswith(".f32grid") else "pgm"
    height, width = field.shape
    if fmt == "f32grid":
        payload = F32_MAGIC + struct.pack("<II", width, height)
        payload += np.ascontiguousarray(field, dtype="<f4").tobytes()
    elif fmt == "pgm":
        samples = np.rint(np.clip(field, 0.0, 1.0) * 255.0).astype(np.uint8)
        payload = f"P5\n{width} {height}\n255\n".encode() + samples.tobytes()
    else:
        raise ValueError(f"unknown raster format {fmt!r}")
    _atomic_write(path, payload)


def save_rgb(img: np.ndarray, path, maxval: int = 255) -> None:
    """Write raw samples as a binary P6 pixmap (16-bit when maxval > 255)."""
    img = np.asarray(img)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ValueError("expected (H, W, 3) raster")
    height, width, _ = img.shape
    dtype = ">u2" if maxval > 255 else "u1"
    samples = np.clip(np.rint(img), 0, maxval).astype(dtype)
    payload = f"P6\n{width} {height}\n{maxval}\n".encode() + samples.tobytes()
    _atomic_write(path, payload)


def save_mask(mask: np.ndarray, path) -> None:
    """Write a boolean mask as an 8-bit P5 graymap (0 / 255)."""
    save_density(np.asarray(mask, dtype=np.float64), path, fmt="pgm")


def load_mask(path) -> np.ndarray:
    return load_density(path) >= 0.5
