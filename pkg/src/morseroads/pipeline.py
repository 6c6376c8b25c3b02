"""Self-training loop around an external segmenter.

Iteration ``i`` starts from segmented fields ``I_i`` (``I_0`` is the
preprocessed raw imagery), reconstructs a graph on every training field,
rasterises it into a label mask, trains the segmenter on those masks and
predicts ``I_{i+1}`` for both training and test images.  Test fields are
reconstructed (always with tip enhancement and arc filtering) and scored
against reference graphs where those exist.

Each finished iteration is stored as a directory ``iter_NNN`` written under
a temporary name and renamed into place, so an interrupted run can resume
from the last complete iteration.
"""

from __future__ import annotations

import json
import logging
import math
import os
import shutil
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Mapping

import numpy as np

from .enhance import detect_tips, enhance_tips
from .errors import FormatError, ParameterError, SegmenterError
from .metrics import DEFAULT_MAX, score
from .morse import reconstruct
from .netgraph import GeoGraph, filter_arcs, rasterize, read_graph, write_graph
from .raster import _read_f32grid, load_mask, load_rgb, preprocess, save_density, save_mask
from .segmenter import IMAGE_SUFFIXES, image_id, make_segmenter

__all__ = [
    "MODES",
    "PRESETS",
    "PipelineConfig",
    "PipelineState",
    "Dataset",
    "apply_preset",
    "split_dataset",
    "select_tau",
    "make_labels",
    "extract_graph",
    "mean_change",
    "stop_check",
    "Pipeline",
]

log = logging.getLogger(__name__)

MODES = ("semi", "label-free", "partial")

# (delta, tau_low, tau_high, low_fraction) per dataset area
PRESETS = {
    "aoi2": dict(delta=0.12, tau_low=0.4, tau_high=0.4, low_fraction=0.0),
    "aoi3": dict(delta=0.1, tau_low=0.3, tau_high=0.4, low_fraction=0.3),
    "aoi4": dict(delta=0.1, tau_low=0.3, tau_high=0.4, low_fraction=0.4),
    "aoi5": dict(delta=0.07, tau_low=0.3, tau_high=0.3, low_fraction=0.0),
}


@dataclass(frozen=True)
class PipelineConfig:
    """Parameters of the training loop.

    ``tips_from`` and ``arc_filter_from`` give the first field index ``i``
    whose training labels use tip enhancement and arc filtering.
    ``delta_schedule`` maps a field index to the ``delta`` used from that
    index on.  ``epsilon`` is the mean absolute per-pixel change of the
    training fields below which the loop stops early.
    """

    delta: float = 0.1
    tau_high: float = 0.4
    tau_low: float = 0.3
    low_fraction: float = 0.0
    mask_half_width: float = 6.5
    iterations: int = 3
    mode: str = "label-free"
    labeled_fraction: float = 0.1
    tips_from: int = 4
    arc_filter_from: int = 4
    tip_window: int = 21
    tip_high: float = 0.5
    tip_low: float = 0.3
    tip_radius: float = 2.0
    delta_schedule: dict = field(default_factory=dict)
    ratios: tuple = (4.0, 1.0, 1.0)
    seed: int = 0
    segmenter: str = "builtin:blur"
    blur_sigma: float = 2.0
    timeout: float | None = None
    epsilon: float = 0.005
    jobs: int = 1
    sample_step: float = 1.0
    max_value: float = DEFAULT_MAX

    def __post_init__(self):
        object.__setattr__(self, "delta_schedule", {int(k): float(v) for k, v in self.delta_schedule.items()})
        object.__setattr__(self, "ratios", tuple(float(r) for r in self.ratios))
        for name in ("delta", "tau_high", "tau_low", "low_fraction", "labeled_fraction",
                     "tip_high", "tip_low"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ParameterError(f"{name} must lie in [0, 1], got {value}")
        for key, value in self.delta_schedule.items():
            if key < 0 or not 0.0 <= value <= 1.0:
                raise ParameterError(f"bad delta schedule entry {key}: {value}")
        if self.mode not in MODES:
            raise ParameterError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.iterations < 1:
            raise ParameterError("iterations must be >= 1")
        if len(self.ratios) != 3 or min(self.ratios) < 0 or sum(self.ratios) <= 0:
            raise ParameterError("ratios must be three non-negative numbers, not all zero")
        if self.mask_half_width < 0 or self.tip_radius < 0:
            raise ParameterError("widths and radii must be >= 0")
        if self.tip_window < 3 or self.tip_window % 2 == 0:
            raise ParameterError("tip_window must be odd and >= 3")
        if self.tip_low > self.tip_high:
            raise ParameterError("tip_low must not exceed tip_high")
        if self.epsilon < 0 or self.jobs < 1 or self.sample_step <= 0:
            raise ParameterError("epsilon >= 0, jobs >= 1 and sample_step > 0 are required")

    def delta_at(self, i: int) -> float:
        keys = [k for k in self.delta_schedule if k <= i]
        return self.delta_schedule[max(keys)] if keys else self.delta

    def to_json(self) -> str:
        d = asdict(self)
        d["ratios"] = list(self.ratios)
        d["delta_schedule"] = {str(k): v for k, v in sorted(self.delta_schedule.items())}
        return json.dumps(d, indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "PipelineConfig":
        d = json.loads(text)
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ParameterError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)


def apply_preset(config: PipelineConfig, name: str) -> PipelineConfig:
    """Copy of ``config`` with a dataset preset's thresholds."""
    if name not in PRESETS:
        raise ParameterError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    if name in ("aoi3", "aoi4"):
        warnings.warn(
            "presets are keyed by area number only; the city attached to AOI_3 and "
            "AOI_4 differs between sources, so check which one you mean",
            stacklevel=2,
        )
    return replace(config, **PRESETS[name])


# --------------------------------------------------------------------------
# pure building blocks
# --------------------------------------------------------------------------


def split_dataset(ids, ratios=(4, 1, 1), seed: int = 0) -> dict[str, list[str]]:
    """Shuffle ``ids`` and cut them into train / validation / test parts.

    Part sizes are the ratio quotas rounded by the largest-remainder rule,
    so they always add up to ``len(ids)``; every part with a positive ratio
    gets at least one item.
    """
    ids = sorted(ids)
    ratios = np.asarray(ratios, dtype=np.float64)
    if ratios.shape != (3,) or np.any(ratios < 0) or ratios.sum() <= 0:
        raise ParameterError("ratios must be three non-negative numbers, not all zero")
    parts = int(np.count_nonzero(ratios))
    n = len(ids)
    if n < parts:
        raise ParameterError(f"cannot split {n} images into {parts} parts")
    quota = n * ratios / ratios.sum()
    sizes = np.floor(quota + 1e-9).astype(np.int64)
    rest = n - int(sizes.sum())
    frac = quota - sizes
    for k in sorted(range(3), key=lambda k: (-frac[k], k))[:rest]:
        sizes[k] += 1
    for k in range(3):
        if ratios[k] > 0 and sizes[k] == 0:
            sizes[int(np.argmax(sizes))] -= 1
            sizes[k] = 1
    order = np.random.default_rng(seed).permutation(n)
    shuffled = [ids[i] for i in order]
    a, b = int(sizes[0]), int(sizes[0] + sizes[1])
    return {
        "train": sorted(shuffled[:a]),
        "validation": sorted(shuffled[a:b]),
        "test": sorted(shuffled[b:]),
    }


def select_tau(fields: Mapping[str, np.ndarray], low_fraction: float, tau_low: float,
               tau_high: float) -> dict[str, float]:
    """Give ``tau_low`` to the ``floor(low_fraction * n)`` dimmest images.

    Images are ranked by total intensity, ties by id.
    """
    if not 0.0 <= low_fraction <= 1.0:
        raise ParameterError(f"low_fraction must lie in [0, 1], got {low_fraction}")
    ranked = sorted(fields, key=lambda k: (float(np.sum(fields[k])), k))
    n_low = int(math.floor(low_fraction * len(ranked) + 1e-9))
    return {k: (tau_low if r < n_low else tau_high) for r, k in enumerate(ranked)}


def extract_graph(field: np.ndarray, delta: float, tau: float | None = None,
                  tips: dict | None = None) -> tuple[GeoGraph, np.ndarray]:
    """Reconstruct a graph, optionally after tip enhancement and with arc filtering.

    ``tips`` holds :func:`detect_tips` keyword arguments plus ``radius``.
    Returns the graph and the (possibly enhanced) field it was built on.
    """
    if tips is not None:
        params = dict(tips)
        radius = params.pop("radius", 2.0)
        field = enhance_tips(field, detect_tips(field, **params), radius)
    g = reconstruct(field, delta).graph
    if tau is not None:
        g = filter_arcs(g, field, tau)
    return g, field


def make_labels(field: np.ndarray, delta: float, tau: float | None,
                mask_half_width: float) -> np.ndarray:
    """Binary mask of the pixels within ``mask_half_width`` of the reconstruction."""
    field = np.asarray(field, dtype=np.float64)
    g, _ = extract_graph(field, delta, tau)
    return rasterize(g, mask_half_width, (field.shape[1], field.shape[0]))


def mean_change(before: Mapping[str, np.ndarray], after: Mapping[str, np.ndarray]) -> float:
    """Mean absolute per-pixel difference over all images present in both."""
    keys = sorted(set(before) & set(after))
    if not keys:
        return 0.0
    total = sum(float(np.abs(after[k] - before[k]).sum()) for k in keys)
    count = sum(before[k].size for k in keys)
    return total / count


def stop_check(history, epsilon: float = 0.005, iterations: int | None = None) -> bool:
    """True when the budget is used up or the training fields stopped moving."""
    if not history:
        return False
    if iterations is not None and history[-1].iteration >= iterations:
        return True
    if len(history) < 2:
        return False
    return mean_change(history[-2].train_fields, history[-1].train_fields) < epsilon


# --------------------------------------------------------------------------
# state
# --------------------------------------------------------------------------


@dataclass
class PipelineState:
    """Everything produced for the fields ``I_i``.

    ``masks`` are the labels that trained the classifier which produced
    these fields (empty for ``i = 0``); ``graphs`` and ``scores`` belong to
    the test images.
    """

    iteration: int
    delta: float
    train_fields: dict
    test_fields: dict
    masks: dict = field(default_factory=dict)
    graphs: dict = field(default_factory=dict)
    scores: dict = field(default_factory=dict)
    taus: dict = field(default_factory=dict)

    @property
    def apls(self) -> float:
        vals = [s[0] for s in self.scores.values()]
        return float(np.mean(vals)) if vals else float("nan")

    @property
    def avg_hausdorff(self) -> float:
        vals = [s[1] for s in self.scores.values()]
        return float(np.mean(vals)) if vals else float("nan")

    def save(self, directory) -> None:
        """Write the state to ``directory`` atomically (temp dir, then rename)."""
        directory = Path(directory)
        tmp = directory.with_name(directory.name + ".tmp")
        if tmp.exists():
            shutil.rmtree(tmp)
        for sub in ("fields", "masks", "graphs"):
            (tmp / sub).mkdir(parents=True)
        for k, f in {**self.train_fields, **self.test_fields}.items():
            save_density(f, tmp / "fields" / f"{k}.f32grid")
        for k, m in self.masks.items():
            save_mask(m, tmp / "masks" / f"{k}.mask.pgm")
        for k, g in self.graphs.items():
            write_graph(g, tmp / "graphs" / f"{k}.graph")
        lines = ["id\ttau\tAPLS\tSH"]
        for k in sorted(self.test_fields):
            apls, sh = self.scores.get(k, (float("nan"), float("nan")))
            lines.append(f"{k}\t{self.taus.get(k, float('nan'))!r}\t{apls!r}\t{sh!r}")
        (tmp / "scores.tsv").write_text("\n".join(lines) + "\n")
        meta = {
            "iteration": self.iteration,
            "delta": self.delta,
            "train": sorted(self.train_fields),
            "test": sorted(self.test_fields),
            "APLS": self.apls,
            "SH": self.avg_hausdorff,
        }
        (tmp / "state.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
        if directory.exists():
            shutil.rmtree(directory)
        os.replace(tmp, directory)

    @classmethod
    def load(cls, directory) -> "PipelineState":
        directory = Path(directory)
        meta = json.loads((directory / "state.json").read_text())

        def field_of(k):
            return _read_f32grid((directory / "fields" / f"{k}.f32grid").read_bytes()).astype(np.float64)

        masks = {image_id(p)[: -len(".mask")]: load_mask(p)
                 for p in sorted((directory / "masks").glob("*.mask.pgm"))}
        graphs = {image_id(p): read_graph(p) for p in sorted((directory / "graphs").glob("*.graph"))}
        scores, taus = {}, {}
        for line in (directory / "scores.tsv").read_text().splitlines()[1:]:
            k, tau, apls, sh = line.split("\t")
            taus[k] = float(tau)
            if not (math.isnan(float(apls)) and math.isnan(float(sh))):
                scores[k] = (float(apls), float(sh))
        return cls(
            iteration=int(meta["iteration"]),
            delta=float(meta["delta"]),
            train_fields={k: field_of(k) for k in meta["train"]},
            test_fields={k: field_of(k) for k in meta["test"]},
            masks=masks,
            graphs=graphs,
            scores=scores,
            taus=taus,
        )


@dataclass(frozen=True)
class Dataset:
    """Images keyed by id, with optional reference graphs."""

    images: dict
    graphs: dict = field(default_factory=dict)

    @property
    def ids(self) -> list[str]:
        return sorted(self.images)

    @classmethod
    def from_dir(cls, root) -> "Dataset":
        """``root/images/<id>.{ppm,pgm,pnm,f32grid}`` and ``root/graphs/<id>.graph``."""
        root = Path(root)
        if not (root / "images").is_dir():
            raise FormatError(f"{root}: no images/ directory")
        images = {image_id(p): p for p in sorted((root / "images").iterdir())
                  if p.suffix in IMAGE_SUFFIXES}
        graphs = {}
        if (root / "graphs").is_dir():
            graphs = {image_id(p): p for p in sorted((root / "graphs").glob("*.graph"))
                      if image_id(p) in images}
        if not images:
            raise FormatError(f"{root}: no images found")
        return cls(images, graphs)


def _as_f32(field: np.ndarray) -> np.ndarray:
    # fields are persisted as float32, keep the in-memory copy identical
    return np.clip(field, 0.0, 1.0).astype(np.float32).astype(np.float64)


class Pipeline:
    """Drives the loop for one dataset in one work directory."""

    def __init__(self, dataset: Dataset, workdir, config: PipelineConfig, segmenter=None):
        self.dataset = dataset
        self.workdir = Path(workdir)
        self.config = config
        self.segmenter = segmenter or make_segmenter(config.segmenter, config.blur_sigma, config.timeout)
        self.split = split_dataset(dataset.ids, config.ratios, config.seed)
        self.train_ids = self.split["train"]
        self.test_ids = self.split["test"]
        self.labeled = self._choose_labeled()
        self._shapes = {}
        self._references = {}

    # -- setup -------------------------------------------------------------

    def _choose_labeled(self) -> list[str]:
        cfg = self.config
        if cfg.mode == "label-free":
            return []
        pool = [k for k in self.train_ids if k in self.dataset.graphs]
        if cfg.mode == "semi":
            if len(pool) != len(self.train_ids):
                raise ParameterError("semi mode needs a reference graph for every training image")
            return pool
        k = int(math.floor(cfg.labeled_fraction * len(self.train_ids) + 0.5))
        if cfg.labeled_fraction > 0:
            k = max(k, 1)
        if k > len(pool):
            raise ParameterError(f"partial mode needs {k} labelled training images, found {len(pool)}")
        rng = np.random.default_rng([cfg.seed, 1])
        return sorted(pool[i] for i in rng.choice(len(pool), size=k, replace=False))

    def _map(self, fn, items):
        items = list(items)
        if self.config.jobs > 1 and len(items) > 1:
            with ThreadPoolExecutor(self.config.jobs) as pool:
                return list(pool.map(fn, items))
        return [fn(x) for x in items]

    def reference(self, k: str) -> GeoGraph | None:
        if k not in self.dataset.graphs:
            return None
        if k not in self._references:
            self._references[k] = read_graph(self.dataset.graphs[k])
        return self._references[k]

    def shape(self, k: str) -> tuple[int, int]:
        if k not in self._shapes:
            self._shapes[k] = load_rgb(self.dataset.images[k]).shape[:2]
        return self._shapes[k]

    def _tip_params(self) -> dict:
        c = self.config
        return dict(window=c.tip_window, t_high=c.tip_high, t_low=c.tip_low, radius=c.tip_radius)

    def state_dir(self, i: int) -> Path:
        return self.workdir / f"iter_{i:03d}"

    # -- stages ------------------------------------------------------------

    def _score_test(self, fields: dict, delta: float):
        cfg = self.config
        ids = [k for k in sorted(fields)]
        taus = select_tau(fields, cfg.low_fraction, cfg.tau_low, cfg.tau_high)

        def one(k):
            g, _ = extract_graph(fields[k], delta, taus[k], self._tip_params())
            ref = self.reference(k)
            if ref is None:
                return g, None
            rep = score(ref, g, sample_step=cfg.sample_step, max_value=cfg.max_value)
            return g, (rep.apls, rep.avg_hausdorff)

        results = self._map(one, ids)
        graphs = {k: r[0] for k, r in zip(ids, results)}
        scores = {k: r[1] for k, r in zip(ids, results) if r[1] is not None}
        return graphs, scores, taus

    def initial_state(self) -> PipelineState:
        sigma = self.config.blur_sigma

        def field_of(k):
            return _as_f32(preprocess(load_rgb(self.dataset.images[k]), sigma))

        train = dict(zip(self.train_ids, self._map(field_of, self.train_ids)))
        test = dict(zip(self.test_ids, self._map(field_of, self.test_ids)))
        delta = self.config.delta_at(0)
        graphs, scores, taus = self._score_test(test, delta)
        return PipelineState(0, delta, train, test, {}, graphs, scores, taus)

    def labels(self, state: PipelineState) -> dict[str, np.ndarray]:
        """Training masks derived from ``state``'s fields (or references)."""
        cfg = self.config
        i = state.iteration
        delta = cfg.delta_at(i)
        ids = self.labeled if (cfg.mode == "partial" and i == 0) else self.train_ids
        taus = select_tau(state.train_fields, cfg.low_fraction, cfg.tau_low, cfg.tau_high)
        labeled = set(self.labeled)

        def one(k):
            h, w = self.shape(k)
            if k in labeled:
                return rasterize(self.reference(k), cfg.mask_half_width, (w, h))
            tips = self._tip_params() if i >= cfg.tips_from else None
            tau = taus[k] if i >= cfg.arc_filter_from else None
            g, _ = extract_graph(state.train_fields[k], delta, tau, tips)
            return rasterize(g, cfg.mask_half_width, (w, h))

        return dict(zip(ids, self._map(one, ids)))

    def _segment(self, i: int, masks: dict) -> dict[str, np.ndarray]:
        work = self.workdir / "work" / f"iter_{i:03d}"
        if work.exists():
            shutil.rmtree(work)
        (work / "images").mkdir(parents=True)
        (work / "labels").mkdir()
        all_ids = sorted(self.train_ids + self.test_ids)
        for k in all_ids:
            src = self.dataset.images[k]
            shutil.copyfile(src, work / "images" / f"{k}{src.suffix}")
        for k, m in masks.items():
            save_mask(m, work / "labels" / f"{k}.mask.pgm")
        self.segmenter.train(work)
        self.segmenter.predict(work)
        out = {}
        for k in all_ids:
            path = work / "segmented" / f"{k}.f32grid"
            if not path.exists():
                raise SegmenterError(f"segmenter produced no output for {k}")
            try:
                grid = _read_f32grid(path.read_bytes()).astype(np.float64)
            except FormatError as exc:
                raise SegmenterError(f"{path}: {exc}") from None
            if grid.shape != self.shape(k):
                raise SegmenterError(f"{path}: shape {grid.shape}, expected {self.shape(k)}")
            if not np.all(np.isfinite(grid)) or grid.min() < -1e-6 or grid.max() > 1 + 1e-6:
                raise SegmenterError(f"{path}: values outside [0, 1]")
            out[k] = _as_f32(grid)
        return out

    def run_iteration(self, state: PipelineState) -> PipelineState:
        """Produce the state for ``I_{i+1}`` from the state for ``I_i``."""
        i = state.iteration
        masks = self.labels(state)
        fields = self._segment(i, masks)
        train = {k: fields[k] for k in self.train_ids}
        test = {k: fields[k] for k in self.test_ids}
        delta = self.config.delta_at(i + 1)
        graphs, scores, taus = self._score_test(test, delta)
        new = PipelineState(i + 1, delta, train, test, masks, graphs, scores, taus)
        new.save(self.state_dir(i + 1))
        log.info("iteration %d: APLS %.4f SH %.3f", i + 1, new.apls, new.avg_hausdorff)
        return new

    # -- driver ------------------------------------------------------------

    def completed(self) -> list[int]:
        if not self.workdir.is_dir():
            return []
        done = []
        for p in self.workdir.glob("iter_[0-9][0-9][0-9]"):
            if (p / "state.json").exists():
                done.append(int(p.name[5:]))
        return sorted(done)

    def _check_config(self) -> None:
        path = self.workdir / "config.json"
        # settings that may change between resumed runs
        loose = {"iterations", "jobs", "timeout", "epsilon"}
        if path.exists():
            old = PipelineConfig.from_json(path.read_text())
            diff = [f.name for f in fields(PipelineConfig)
                    if f.name not in loose and getattr(old, f.name) != getattr(self.config, f.name)]
            if diff:
                raise ParameterError(f"work directory was created with different settings: {diff}")
        self.workdir.mkdir(parents=True, exist_ok=True)
        tmp = path.with_name("config.json.tmp")
        tmp.write_text(self.config.to_json() + "\n")
        os.replace(tmp, path)

    def run(self, resume: bool = True) -> list[PipelineState]:
        """Iterate until :func:`stop_check` fires; returns the last two states.

        With ``resume`` the loop continues from the last complete iteration
        in the work directory; otherwise the directory is cleared first.
        """
        if not resume and self.workdir.exists():
            shutil.rmtree(self.workdir)
        self._check_config()
        for p in self.workdir.glob("iter_*.tmp"):
            shutil.rmtree(p)
        done = self.completed()
        if done:
            history = [PipelineState.load(self.state_dir(j)) for j in done[-2:]]
        else:
            state = self.initial_state()
            state.save(self.state_dir(0))
            history = [state]
        cfg = self.config
        while not stop_check(history, cfg.epsilon, cfg.iterations):
            history.append(self.run_iteration(history[-1]))
            history = history[-2:]
        return history
