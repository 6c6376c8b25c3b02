import math

import numpy as np
import pytest

from morseroads.errors import ParameterError
from morseroads.metrics import DEFAULT_MAX, apls, avg_hausdorff, path_graph, sample_points, score
from morseroads.netgraph import GeoGraph

import oracles


def random_graph(rng, n=12, m=16, span=60.0):
    xy = rng.uniform(0, span, (n, 2))
    m = min(m, n * (n - 1) // 2)
    edges = set()
    while len(edges) < m:
        a, b = sorted(rng.choice(n, 2, replace=False).tolist())
        edges.add((a, b))
    return GeoGraph(rng.permutation(10 * n)[:n], xy, sorted(edges))


def triangle_pair():
    apex = (50.0, math.sqrt(60.0**2 - 50.0**2))
    straight = GeoGraph([0, 1, 2], [(0, 0), (50, 0), (100, 0)], [(0, 1), (1, 2)])
    bent = GeoGraph([0, 1, 2], [(0, 0), apex, (100, 0)], [(0, 1), (1, 2)])
    return straight, bent


def test_identity_scores_perfect(rng):
    g = random_graph(rng)
    r = score(g, g)
    assert r.apls == 1.0
    assert r.avg_hausdorff == 0.0


def test_longer_detour_example():
    straight, bent = triangle_pair()
    a = apls(straight, bent)
    assert a.c12 == pytest.approx(0.8)
    assert a.c21 == pytest.approx(5 / 6)
    assert a.apls == pytest.approx(0.8163265306122448, abs=1e-12)


def test_parallel_segments_hausdorff():
    g1 = GeoGraph([0, 1], [(0, 0), (100, 0)], [(0, 1)])
    g2 = GeoGraph([0, 1], [(0, 5), (100, 5)], [(0, 1)])
    assert avg_hausdorff(g1, g2) == pytest.approx(10.0)
    assert apls(g1, g2).apls == 1.0


def test_empty_graphs():
    empty = GeoGraph.empty()
    g = GeoGraph([0, 1], [(0, 0), (10, 0)], [(0, 1)])
    assert avg_hausdorff(empty, empty) == 0.0
    assert avg_hausdorff(g, empty) == DEFAULT_MAX
    assert avg_hausdorff(empty, g, max_value=77) == 77
    assert apls(g, empty).apls == 0.0
    assert apls(empty, empty).apls == 0.0


def test_disconnected_prediction_costs_one():
    g1 = GeoGraph([0, 1, 2], [(0, 0), (10, 0), (20, 0)], [(0, 1), (1, 2)])
    g2 = GeoGraph([0, 1, 2, 3], [(0, 0), (9, 0), (11, 0), (20, 0)], [(0, 1), (2, 3)])
    a = apls(g1, g2)
    assert a.c12 == 0.0
    assert a.apls == 0.0


def test_max_snap_penalises_far_nodes():
    g1 = GeoGraph([0, 1], [(0, 0), (10, 0)], [(0, 1)])
    g2 = GeoGraph([0, 1], [(0, 30), (10, 30)], [(0, 1)])
    assert apls(g1, g2).apls == 1.0
    assert apls(g1, g2, max_snap=5).apls == 0.0


@pytest.mark.parametrize("seed", range(12))
def test_apls_matches_oracle(seed):
    rng = np.random.default_rng(seed)
    g1 = random_graph(rng, n=int(rng.integers(2, 14)), m=int(rng.integers(1, 12)))
    g2 = random_graph(rng, n=int(rng.integers(2, 14)), m=int(rng.integers(1, 12)))
    assert apls(g1, g2).apls == pytest.approx(oracles.apls(g1, g2), abs=1e-12)


@pytest.mark.parametrize("seed", range(8))
def test_hausdorff_matches_oracle(seed):
    rng = np.random.default_rng(100 + seed)
    g1 = random_graph(rng, n=8, m=7)
    g2 = random_graph(rng, n=9, m=8)
    step = float(rng.uniform(0.5, 3.0))
    assert avg_hausdorff(g1, g2, step) == pytest.approx(oracles.avg_hausdorff(g1, g2, step), abs=1e-9)


def ring(n=8, r=20.0):
    t = 2 * np.pi * np.arange(n) / n
    return GeoGraph(np.arange(n), np.stack([r * np.cos(t), r * np.sin(t)], 1),
                    [(i, (i + 1) % n) for i in range(n)])


def test_ring_scores_itself_perfectly():
    g = ring()
    assert apls(g, g).apls == 1.0
    assert apls(g, g).n12 == 1


def test_missing_loop_is_penalised():
    # a stick with a loop hanging off its end, against the stick alone
    loop = ring(6, 10.0)
    xy = np.vstack([loop.xy + (40.0, 0.0), [(0.0, 0.0)]])
    edges = loop.edges.tolist() + [[6, 3]]
    lollipop = GeoGraph(np.arange(7), xy, edges)
    stick = GeoGraph([0, 1], [(0.0, 0.0), (30.0, 0.0)], [(0, 1)])
    assert apls(lollipop, lollipop).apls == 1.0
    assert apls(lollipop, stick).apls < 0.9
    assert apls(lollipop, stick).apls == pytest.approx(oracles.apls(lollipop, stick), abs=1e-12)


@pytest.mark.parametrize("seed", range(6))
def test_apls_with_loops_matches_oracle(seed):
    rng = np.random.default_rng(500 + seed)
    g1 = random_graph(rng, n=int(rng.integers(3, 9)), m=int(rng.integers(3, 10)))
    g2 = ring(int(rng.integers(3, 9)), float(rng.uniform(5, 30)))
    assert apls(g1, g2).apls == pytest.approx(oracles.apls(g1, g2), abs=1e-12)


def test_symmetry(rng):
    g1, g2 = random_graph(rng), random_graph(rng)
    assert apls(g1, g2).apls == pytest.approx(apls(g2, g1).apls, abs=1e-12)
    assert avg_hausdorff(g1, g2) == pytest.approx(avg_hausdorff(g2, g1), abs=1e-12)


def test_degree_two_vertices_do_not_change_junction_apls():
    straight, bent = triangle_pair()
    split = GeoGraph([0, 1, 2, 3], [(0, 0), (20, 0), (50, 0), (100, 0)], [(0, 1), (1, 2), (2, 3)])
    assert apls(split, bent).apls == pytest.approx(apls(straight, bent).apls)


def test_all_nodes_mode_counts_every_vertex():
    straight, bent = triangle_pair()
    a = apls(straight, bent, nodes="all")
    assert a.n12 == 3
    assert apls(straight, bent).n12 == 1


def test_path_graph_control_points():
    g = GeoGraph([0, 1], [(0, 0), (10, 0)], [(0, 1)])
    xy, adj = path_graph(g, step=2.5)
    assert len(xy) == 5
    assert adj.sum() == pytest.approx(20.0)


def test_sample_points_spacing():
    g = GeoGraph([0, 1], [(0, 0), (10, 0)], [(0, 1)])
    pts = sample_points(g, 3.0)
    assert sorted(pts[:, 0].tolist()) == [0, 3, 6, 9, 10]


def test_parameter_validation():
    g = GeoGraph([0, 1], [(0, 0), (10, 0)], [(0, 1)])
    with pytest.raises(ParameterError):
        sample_points(g, 0)
    with pytest.raises(ParameterError):
        apls(g, g, nodes="corners")
    with pytest.raises(ParameterError):
        apls(g, g, densify_step=-1)
