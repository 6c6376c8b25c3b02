"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py -v``.  The lines are printed with
output capture disabled, so they appear even without ``-s``.
"""

import math
import time
from pathlib import Path

import numpy as np
import pytest

from morseroads.enhance import detect_tips, enhance_tips
from morseroads.errors import SegmenterError
from morseroads.metrics import apls, avg_hausdorff
from morseroads.morse import reconstruct
from morseroads.netgraph import GeoGraph, filter_arcs
from morseroads.pipeline import Dataset, Pipeline, PipelineConfig, PipelineState, extract_graph
from morseroads.segmenter import BlurSegmenter
from morseroads.synthetic import dead_end_field, density_from_graph, street_grid, write_corpus
from morseroads.topology import compute_persistence

import oracles


@pytest.fixture
def report(capsys):
    def emit(number, ok, detail):
        with capsys.disabled():
            print(f"\ncriterion {number}: {'PASS' if ok else 'FAIL'} ({detail})")

    return emit


def level_fields(count, max_side, seed):
    """Random fields of random shape whose values take at most 256 levels."""
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(count):
        h, w = rng.integers(1, max_side + 1, 2)
        levels = int(rng.integers(1, 257))
        out.append(rng.integers(0, levels, (h, w)) / max(levels - 1, 1))
    return out


def brute_maxima(field):
    """Vertices with no greater neighbour in the (value, index) order."""
    h, w = field.shape
    rank = oracles.total_rank(field).reshape(h, w)
    count = 0
    for y in range(h):
        for x in range(w):
            nbrs = [rank[y + dy, x + dx] for dx, dy in oracles.OFFSETS
                    if 0 <= x + dx < w and 0 <= y + dy < h]
            count += all(r < rank[y, x] for r in nbrs)
    return count


def random_graph(rng, n, m, span=60.0):
    xy = rng.uniform(0, span, (n, 2))
    m = min(m, n * (n - 1) // 2)
    edges = set()
    while len(edges) < m:
        edges.add(tuple(sorted(rng.choice(n, 2, replace=False).tolist())))
    return GeoGraph(np.arange(n), xy, sorted(edges))


def edge_keys(g):
    return {tuple(sorted(e)) for e in g.id_edges().tolist()}


def tree_bytes(root: Path) -> dict:
    return {str(p.relative_to(root)): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


class CrashOnPredict:
    """Segmenter that raises on its n-th predict call, emulating an abort."""

    def __init__(self, inner, n):
        self.inner = inner
        self.n = n
        self.calls = 0

    def train(self, workdir):
        self.inner.train(workdir)

    def predict(self, workdir):
        self.calls += 1
        if self.calls == self.n:
            raise SegmenterError("aborted")
        self.inner.predict(workdir)


@pytest.fixture(scope="module")
def level_corpus():
    return level_fields(200, 32, seed=2024)


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    root = tmp_path_factory.mktemp("corpus20")
    write_corpus(root, n=20, size=160, seed=0)
    return Dataset.from_dir(root)


def test_criterion_1_persistence_matches_threshold_sweep(report, level_corpus):
    compute_persistence(level_corpus[0])
    mismatches = 0
    elapsed = 0.0
    for field in level_corpus:
        start = time.perf_counter()
        d = compute_persistence(field)
        elapsed += time.perf_counter() - start
        pairs, essential = oracles.sweep_pairs(field)
        mine = sorted((int(m), float(b), float(x)) for m, _, b, x in d)
        mismatches += mine != pairs or sorted(d.essential.tolist()) != essential
    ok = mismatches == 0 and elapsed < 10.0
    report(1, ok, f"{mismatches} mismatching fields of 200, {elapsed:.3f} s")
    assert mismatches == 0
    assert elapsed < 10.0


def test_criterion_2_max_count_identity(report, level_corpus):
    bad = sum(
        len(d) + len(d.essential) != brute_maxima(f)
        for f, d in ((f, compute_persistence(f)) for f in level_corpus)
    )
    report(2, bad == 0, f"{bad} violations of 200")
    assert bad == 0


def test_criterion_3_monotone_in_delta_and_tau(report):
    rng = np.random.default_rng(7)
    deltas = np.round(np.arange(0.0, 1.0, 0.1), 10)
    violations = 0
    for k in range(50):
        field = rng.random((24, 24))
        if k % 2:
            field = np.round(field * 12) / 12
        for opts in (dict(), dict(cycles=False, cancel=False)):
            graphs = [edge_keys(reconstruct(field, d, **opts).graph) for d in deltas]
            violations += sum(not b <= a for a, b in zip(graphs, graphs[1:]))
        g = reconstruct(field, 0.05).graph
        kept = [edge_keys(filter_arcs(g, field, t)) for t in deltas]
        violations += sum(not b <= a for a, b in zip(kept, kept[1:]))
    report(3, violations == 0, f"{violations} violations over 50 fields")
    assert violations == 0


def test_criterion_4_metric_identities(report):
    rng = np.random.default_rng(11)
    not_perfect = 0
    worst_asym = 0.0
    for _ in range(50):
        g = random_graph(rng, int(rng.integers(2, 15)), int(rng.integers(1, 25)))
        h = random_graph(rng, int(rng.integers(2, 15)), int(rng.integers(1, 25)))
        not_perfect += apls(g, g).apls != 1.0 or avg_hausdorff(g, g) != 0.0
        worst_asym = max(worst_asym, abs(apls(g, h).apls - apls(h, g).apls))
    apex = (50.0, math.sqrt(60.0**2 - 50.0**2))
    straight = GeoGraph([0, 1, 2], [(0, 0), (50, 0), (100, 0)], [(0, 1), (1, 2)])
    bent = GeoGraph([0, 1, 2], [(0, 0), apex, (100, 0)], [(0, 1), (1, 2)])
    detour = apls(straight, bent).apls
    lower = GeoGraph([0, 1], [(0, 0), (100, 0)], [(0, 1)])
    upper = GeoGraph([0, 1], [(0, 5), (100, 5)], [(0, 1)])
    parallel = avg_hausdorff(lower, upper)
    ok = (not_perfect == 0 and worst_asym <= 1e-12 and abs(detour - 0.81632) <= 1e-4
          and abs(parallel - 10) <= 0.1)
    report(4, ok, f"{not_perfect} imperfect self-scores, asymmetry {worst_asym:.1e}, "
                  f"detour APLS {detour:.5f}, parallel S_H {parallel:.3f}")
    assert not_perfect == 0
    assert worst_asym <= 1e-12
    assert detour == pytest.approx(0.81632, abs=1e-4)
    assert parallel == pytest.approx(10.0, abs=0.1)


def test_criterion_5_street_grid_end_to_end(report):
    truth = street_grid(512)
    start = time.perf_counter()
    field = density_from_graph(truth, 512, half_width=6.5, noise=0.1, blur=4.0,
                               rng=np.random.default_rng(5))
    g, _ = extract_graph(field, 0.3, 0.2)
    elapsed = time.perf_counter() - start
    a = apls(truth, g).apls
    s = avg_hausdorff(truth, g)
    ok = a >= 0.9 and s <= 5.0 and elapsed < 30.0
    report(5, ok, f"APLS {a:.4f}, S_H {s:.3f} px, {elapsed:.2f} s")
    assert a >= 0.9
    assert s <= 5.0
    assert elapsed < 30.0


def test_criterion_6_tip_forcing_reaches_dead_end(report):
    field, end = dead_end_field()
    plain = reconstruct(field, 0.3).graph
    miss = np.hypot(*(plain.xy - end).T).min()
    tips = detect_tips(field, 21, 0.4, 0.2)
    forced = reconstruct(enhance_tips(field, tips, 2.0), 0.3).graph
    reach = np.hypot(*(forced.xy - end).T).min()
    ok = miss > 3.0 and reach <= 3.0
    report(6, ok, f"endpoint gap {miss:.1f} px without tips, {reach:.1f} px with tips")
    assert miss > 3.0
    assert reach <= 3.0


def scaling_field(size):
    # the street grid scaled with the image, so road density stays fixed
    k = size // 512
    g = street_grid(size, n=5 * k, margin=48.0 * k)
    return density_from_graph(g, size, rng=np.random.default_rng(1))


def test_criterion_7_scaling(report):
    small, large = scaling_field(512), scaling_field(1024)
    for f in (small, large):
        reconstruct(f, 0.3)
    times = {512: [], 1024: []}
    # alternate sizes so slow drifts of the machine hit both alike
    for _ in range(5):
        for size, f in ((512, small), (1024, large)):
            start = time.perf_counter()
            reconstruct(f, 0.3)
            times[size].append(time.perf_counter() - start)
    ratio = np.mean(times[1024]) / np.mean(times[512])
    big = scaling_field(1300)
    start = time.perf_counter()
    reconstruct(big, 0.3)
    full = time.perf_counter() - start
    ok = ratio <= 5.0 and full < 60.0
    report(7, ok, f"1024/512 runtime ratio {ratio:.2f}, 1300x1300 in {full:.2f} s")
    assert ratio <= 5.0
    assert full < 60.0


def test_criterion_8_pipeline_smoke(report, corpus, tmp_path):
    cfg = PipelineConfig(mode="label-free", segmenter="builtin:blur", iterations=3,
                         epsilon=0.0, seed=0)
    Pipeline(corpus, tmp_path / "a", cfg).run(resume=False)
    Pipeline(corpus, tmp_path / "b", cfg).run(resume=False)
    same = tree_bytes(tmp_path / "a") == tree_bytes(tmp_path / "b")
    first = PipelineState.load(tmp_path / "a" / "iter_001").apls
    third = PipelineState.load(tmp_path / "a" / "iter_003").apls

    aborted = Pipeline(corpus, tmp_path / "c", cfg,
                       segmenter=CrashOnPredict(BlurSegmenter(cfg.blur_sigma), 2))
    with pytest.raises(SegmenterError):
        aborted.run(resume=False)
    stopped_at = aborted.completed()
    Pipeline(corpus, tmp_path / "c", cfg).run(resume=True)
    resumed = tree_bytes(tmp_path / "a") == tree_bytes(tmp_path / "c")

    ok = same and third >= first and resumed
    report(8, ok, f"deterministic {same}, APLS {first:.4f} -> {third:.4f}, "
                  f"resumed after iterations {stopped_at}: identical {resumed}")
    assert same
    assert third >= first
    assert stopped_at == [0, 1]
    assert resumed


def test_criterion_9_partial_mode_keeps_ground_truth(report, corpus, tmp_path):
    cfg = PipelineConfig(mode="partial", labeled_fraction=0.1, segmenter="builtin:linear",
                         iterations=3, epsilon=0.0, seed=0)
    p = Pipeline(corpus, tmp_path / "w", cfg)
    p.run(resume=False)
    changed = []
    for k in p.labeled:
        blobs = {(p.state_dir(i) / "masks" / f"{k}.mask.pgm").read_bytes() for i in (1, 2, 3)}
        if len(blobs) != 1:
            changed.append(k)
    ok = bool(p.labeled) and not changed
    report(9, ok, f"{len(p.labeled)} labelled images, {len(changed)} with changing masks")
    assert p.labeled
    assert not changed
