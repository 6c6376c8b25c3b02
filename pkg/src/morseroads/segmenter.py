"""Segmenter backends speaking the work-directory protocol.

A segmenter is driven twice per iteration on a work directory ``D``:

``train``
    ``D/images/<id>.<ext>`` holds every image and ``D/labels/<id>.mask.pgm``
    the training masks.  Images without a mask are held out.  Model state
    may be written anywhere inside ``D``.
``predict``
    For every image, write ``D/segmented/<id>.f32grid`` with values in
    [0, 1].

External programs are called as ``<cmd> train --workdir D`` and
``<cmd> predict --workdir D``.  The builtin backends run in-process and can
also be started as ``python -m morseroads.segmenter --kind K <mode> --workdir D``.
"""

from __future__ import annotations

import argparse
import shlex
import subprocess
import sys
from pathlib import Path

import numpy as np

from .errors import SegmenterError
from .raster import gaussian_blur, grayscale, load_mask, load_rgb, normalize, preprocess, save_density

__all__ = [
    "image_id",
    "list_images",
    "BlurSegmenter",
    "LinearSegmenter",
    "ExternalSegmenter",
    "make_segmenter",
    "main",
]

IMAGE_SUFFIXES = (".ppm", ".pgm", ".pnm", ".f32grid")


def image_id(path: Path) -> str:
    return path.name[: -len(path.suffix)]


def list_images(directory) -> list[Path]:
    directory = Path(directory)
    return sorted(p for p in directory.iterdir() if p.suffix in IMAGE_SUFFIXES)


class BlurSegmenter:
    """Baseline that ignores labels: prediction is the preprocessed image."""

    def __init__(self, sigma: float = 2.0):
        self.sigma = sigma

    def train(self, workdir) -> None:
        pass

    def predict(self, workdir) -> None:
        workdir = Path(workdir)
        out = workdir / "segmented"
        out.mkdir(exist_ok=True)
        for path in list_images(workdir / "images"):
            save_density(preprocess(load_rgb(path), self.sigma), out / f"{image_id(path)}.f32grid")


def _features(img: np.ndarray) -> np.ndarray:
    """Per-pixel features: multi-scale smoothed channels and local contrast."""
    gray = normalize(grayscale(img))
    chans = [normalize(img[..., c]) for c in range(3)]
    feats = [np.ones_like(gray)]
    for s in (1.0, 2.0, 4.0):
        for c in chans:
            feats.append(gaussian_blur(c, s))
        mean = gaussian_blur(gray, s)
        feats.append(np.sqrt(np.maximum(gaussian_blur(gray * gray, s) - mean * mean, 0.0)))
    return np.stack(feats, axis=-1).reshape(-1, len(feats))


class LinearSegmenter:
    """Ridge-regression pixel classifier on smoothed colour features.

    Small enough to train in a second, but it does learn from the labels,
    which makes the self-training loop non-trivial.
    """

    def __init__(self, ridge: float = 1e-3, sigma: float = 1.0):
        self.ridge = ridge
        self.sigma = sigma

    def train(self, workdir) -> None:
        workdir = Path(workdir)
        gram = None
        rhs = None
        for path in list_images(workdir / "images"):
            label = workdir / "labels" / f"{image_id(path)}.mask.pgm"
            if not label.exists():
                continue
            x = _features(load_rgb(path))
            y = load_mask(label).ravel().astype(np.float64)
            if gram is None:
                gram = np.zeros((x.shape[1], x.shape[1]))
                rhs = np.zeros(x.shape[1])
            gram += x.T @ x
            rhs += x.T @ y
        if gram is None:
            raise SegmenterError("no labelled images to train on")
        gram += self.ridge * np.trace(gram) / gram.shape[0] * np.eye(gram.shape[0])
        np.save(workdir / "linear_model.npy", np.linalg.solve(gram, rhs))

    def predict(self, workdir) -> None:
        workdir = Path(workdir)
        weights = np.load(workdir / "linear_model.npy")
        out = workdir / "segmented"
        out.mkdir(exist_ok=True)
        for path in list_images(workdir / "images"):
            img = load_rgb(path)
            pred = (_features(img) @ weights).reshape(img.shape[:2])
            pred = gaussian_blur(np.clip(pred, 0.0, 1.0), self.sigma)
            save_density(np.clip(pred, 0.0, 1.0), out / f"{image_id(path)}.f32grid")


class ExternalSegmenter:
    """Runs an external command; failures become :class:`SegmenterError`."""

    def __init__(self, command: str, timeout: float | None = None):
        self.argv = shlex.split(command)
        if not self.argv:
            raise SegmenterError("empty segmenter command")
        self.timeout = timeout

    def _run(self, mode: str, workdir) -> None:
        argv = [*self.argv, mode, "--workdir", str(workdir)]
        try:
            proc = subprocess.run(argv, capture_output=True, text=True, timeout=self.timeout)
        except subprocess.TimeoutExpired as exc:
            raise SegmenterError(
                f"segmenter {mode} timed out after {self.timeout}s",
                stdout=exc.stdout, stderr=exc.stderr,
            ) from None
        except OSError as exc:
            raise SegmenterError(f"cannot start segmenter: {exc}") from None
        if proc.returncode != 0:
            raise SegmenterError(
                f"segmenter {mode} exited with status {proc.returncode}",
                returncode=proc.returncode, stdout=proc.stdout, stderr=proc.stderr,
            )

    def train(self, workdir) -> None:
        self._run("train", workdir)

    def predict(self, workdir) -> None:
        self._run("predict", workdir)


def make_segmenter(kind: str, sigma: float = 2.0, timeout: float | None = None):
    """``builtin:blur``, ``builtin:linear`` or an external command line."""
    if kind == "builtin:blur":
        return BlurSegmenter(sigma)
    if kind == "builtin:linear":
        return LinearSegmenter()
    if kind.startswith("builtin:"):
        raise SegmenterError(f"unknown builtin segmenter {kind!r}")
    return ExternalSegmenter(kind, timeout)


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="python -m morseroads.segmenter",
        description="Builtin segmenters behind the external work-directory protocol.",
        formatter_class=argparse.ArgumentDefaultsHelpFormatter,
    )
    parser.add_argument("--kind", choices=("blur", "linear"), default="blur")
    parser.add_argument("--sigma", type=float, default=2.0, help="blur sigma for the blur kind")
    parser.add_argument("mode", choices=("train", "predict"))
    parser.add_argument("--workdir", required=True)
    args = parser.parse_args(argv)
    seg = BlurSegmenter(args.sigma) if args.kind == "blur" else LinearSegmenter()
    try:
        getattr(seg, args.mode)(args.workdir)
    except (OSError, ValueError, SegmenterError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
