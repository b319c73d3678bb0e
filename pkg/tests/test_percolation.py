import math

import numpy as np
import pytest

from percolab.errors import VertexLimitExceeded
from percolab.kernel import build_kernel
from percolab.oracle import Enumeration, lattice_box_graph
from percolab.percolation import (BatchRequest, EdgeCoinSource, ExitBall, GraphModel, LatticeModel, RadiusCap,
                                  SizeCap, StoppingRule, edge_is_open, estimate_pc, explore_cluster,
                                  explore_truncated_cluster)

NN2 = build_kernel("nn", 2)


def test_p_zero_gives_singleton():
    cl = explore_cluster(NN2, 0.0, EdgeCoinSource(1, 0))
    assert cl.size == 1 and len(cl.open_edges) == 0
    assert cl.stopped_by == "none"


def test_certain_edges_exit_deterministically():
    k = build_kernel("nn", 1)
    cl = explore_cluster(k, k.p_max, EdgeCoinSource(3, 0), ExitBall(5))
    assert cl.exited_ball
    assert abs(cl.exit_vertex[0]) == 6


def test_exploration_is_a_pure_function_of_the_coin():
    a = explore_cluster(NN2, 1.8, EdgeCoinSource(9, 17), SizeCap(500))
    b = explore_cluster(NN2, 1.8, EdgeCoinSource(9, 17), SizeCap(500))
    np.testing.assert_array_equal(a.vertices, b.vertices)
    np.testing.assert_array_equal(a.open_edges, b.open_edges)
    c = explore_cluster(NN2, 1.8, EdgeCoinSource(9, 18), SizeCap(500))
    assert a.vertex_set != c.vertex_set or a.edge_set != c.edge_set


def test_batch_independent_of_workers_and_chunking():
    req = BatchRequest(exit_radius=6, radii=(2.0, 4.0))
    one = LatticeModel(NN2, 1.9, workers=1).batch(5, 0, 9000, req)
    many = LatticeModel(NN2, 1.9, workers=4).batch(5, 0, 9000, req)
    for f in ("size", "cause", "max_r2", "ball", "exited"):
        np.testing.assert_array_equal(getattr(one, f), getattr(many, f))
    tail = LatticeModel(NN2, 1.9).batch(5, 5000, 4000, req)
    np.testing.assert_array_equal(tail.size, one.size[5000:])
    rows = np.array([3, 77, 8123])
    again = LatticeModel(NN2, 1.9).batch_indices(5, rows, req)
    np.testing.assert_array_equal(again.max_r2, one.max_r2[rows])


def test_edge_strategy_reveals_pure_coins():
    model = LatticeModel(NN2, 1.6, strategy="edge")
    coin = EdgeCoinSource(21, 4)
    cl = model.explore(coin)
    vs = cl.vertex_set
    es = cl.edge_set
    for v in vs:
        for e in [(1, 0), (-1, 0), (0, 1), (0, -1)]:
            w = (v[0] + e[0], v[1] + e[1])
            is_open = edge_is_open(coin, NN2, 1.6, v, w)
            assert ((min(v, w), max(v, w)) in es) == is_open
            if is_open:
                assert w in vs


def test_edges_recorded_once():
    cl = explore_cluster(build_kernel("frso", 2, L=2), 4.0, EdgeCoinSource(2, 2), SizeCap(3000))
    pairs = [tuple(sorted(map(int, e))) for e in cl.open_edges]
    assert len(pairs) == len(set(pairs))
    # the explored graph is connected
    n = cl.size
    adj = [[] for _ in range(n)]
    for a, b in pairs:
        adj[a].append(b)
        adj[b].append(a)
    seen, stack = {0}, [0]
    while stack:
        x = stack.pop()
        for y in adj[x]:
            if y not in seen:
                seen.add(y)
                stack.append(y)
    assert len(seen) == n


def test_radius_cap_keeps_outside_vertices_as_leaves():
    R = 4.0
    cl = explore_cluster(NN2, 2.2, EdgeCoinSource(1, 5), RadiusCap(R))
    r2 = np.sum(cl.vertices.astype(float) ** 2, axis=1)
    assert np.all(cl.expanded[r2 <= R * R])
    assert not np.any(cl.expanded[r2 > R * R])


def test_truncated_cluster_is_subgraph():
    k = build_kernel("frso", 1, L=4)
    for i in range(20):
        full = explore_cluster(k, 1.1, EdgeCoinSource(4, i), SizeCap(2000), strategy="edge")
        if full.size >= 2000:
            continue
        tr = explore_truncated_cluster(k, 1.1, 2.0, EdgeCoinSource(4, i), strategy="edge")
        assert tr.vertex_set <= full.vertex_set
        assert tr.edge_set <= full.edge_set
        for a, b in tr.edge_set:
            assert abs(a[0] - b[0]) <= 2


@pytest.mark.parametrize("strategy", ["thinning", "edge"])
def test_one_arm_exact_in_one_dimension(strategy):
    k = build_kernel("nn", 1)
    p, r = 1.4, 2
    q = p / 2
    exact = 1 - (1 - q ** (r + 1)) ** 2
    b = LatticeModel(k, p, strategy=strategy).batch(8, 0, 40000, BatchRequest(exit_radius=r))
    m = b.exited.mean()
    assert abs(m - exact) < 4 * math.sqrt(exact * (1 - exact) / 40000)


def test_lattice_matches_box_oracle():
    p = 1.2
    g = lattice_box_graph(NN2, p, 1.0)
    exact = Enumeration(g).probability(Enumeration(g).reaches_boundary())
    b = LatticeModel(NN2, p).batch(3, 0, 40000, BatchRequest(exit_radius=1.0))
    se = math.sqrt(exact * (1 - exact) / 40000)
    assert abs(b.exited.mean() - exact) < 4 * se
    gb = GraphModel(g).batch(3, 0, 40000, BatchRequest(exit_radius=1.0))
    assert abs(gb.exited.mean() - exact) < 4 * se


def test_vertex_limit():
    with pytest.raises(VertexLimitExceeded):
        LatticeModel(NN2, NN2.p_max, max_vertices=100).explore(EdgeCoinSource(0, 0))


def test_invalid_inputs():
    with pytest.raises(ValueError):
        LatticeModel(NN2, 5.0)
    with pytest.raises(ValueError):
        StoppingRule(exit_radius=-1)
    with pytest.raises(ValueError):
        edge_is_open(EdgeCoinSource(0), NN2, 1.0, (0, 0), (0, 0))
    with pytest.raises(ValueError):
        estimate_pc(NN2, (4, 8), 0.01, 100)
    with pytest.raises(ValueError):
        estimate_pc(NN2, (16, 8), 0.01, 100)


def test_estimate_pc_degenerate_bracket():
    k = build_kernel("nn", 1)
    res = estimate_pc(k, (8, 16), 0.01, 500, 1, bracket=(k.p_max, k.p_max))
    assert res.estimate.value == k.p_max


def test_estimate_pc_nearest_neighbour_square_lattice():
    res = estimate_pc(NN2, (8, 16), 0.02, 4000, 1, bracket=(1.6, 2.4))
    assert abs(res.estimate.value - 2.0) < max(4 * res.estimate.stderr, 0.1)
    assert res.samples_used == 4000 * res.iterations
