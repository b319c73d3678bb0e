import numpy as np
import pytest

from percolab.backbone import (backbone_count_curve, backbone_report, bridges, classify_graph, pivotal_edges,
                               verify_pivotal)
from percolab.kernel import build_kernel
from percolab.oracle import FiniteGraphSpec, enumerate_backbone_and_pivotal, random_graph
from percolab.percolation import EdgeCoinSource, LatticeModel, RadiusCap


def test_dumbbell():
    edges = [(0, 1), (1, 2), (2, 3), (1, 3), (3, 4), (2, 5)]
    g = FiniteGraphSpec.build(edges, 1.0, boundary=[4])
    conf = [True] * len(edges)
    bb, piv, und = classify_graph(g, conf)
    assert not und
    assert bb == {(0, 1), (1, 2), (2, 3), (1, 3), (3, 4)}
    assert set(piv) == {(0, 1), (3, 4)}
    assert (bb, set(piv)) == enumerate_backbone_and_pivotal(g, conf)


def test_bridges_of_a_path_with_cycle():
    b = bridges(5, [(0, 1), (1, 2), (2, 0), (2, 3), (3, 4)])
    assert sorted(np.flatnonzero(b).tolist()) == [3, 4]


@pytest.mark.parametrize("seed", range(6))
def test_random_graphs_against_brute_force(seed):
    rng = np.random.default_rng(seed)
    for _ in range(60):
        nv = int(rng.integers(3, 10))
        ne = int(rng.integers(nv - 1, min(nv * (nv - 1) // 2, 16) + 1))
        g = random_graph(rng, nv, ne, n_boundary=int(rng.integers(1, 3)))
        conf = rng.random(g.n_edges) < 0.8
        bb, piv, und = classify_graph(g, conf)
        ebb, epiv = enumerate_backbone_and_pivotal(g, conf)
        assert not und
        assert bb == ebb
        assert set(piv) == epiv


def test_line_backbone_count():
    k = build_kernel("nn", 1)
    R = 12
    cl = LatticeModel(k, k.p_max).explore(EdgeCoinSource(0, 0), RadiusCap(R))
    rep = backbone_report(cl, R, radii=[2, 5])
    assert rep.n_bb_by_radius == {2.0: 6, 5.0: 12}
    # two disjoint arms: no single edge separates the origin from the boundary
    assert rep.pivotal_edges == []
    assert verify_pivotal(cl, R, pivotal_edges(cl, R))
    curve = backbone_count_curve(k, k.p_max, [1, 3], 4, 5, seed=1)
    assert [c.estimate.value for c in curve] == [4.0, 8.0]
    assert curve[0].estimate.meta["acceptance_rate"] == 1.0


def test_pivotal_subset_of_backbone_on_lattice():
    k = build_kernel("nn", 2)
    m = LatticeModel(k, 1.7)
    n = 0
    for i in range(200):
        cl = m.explore(EdgeCoinSource(3, i), RadiusCap(6))
        if not (np.sum(cl.vertices.astype(float) ** 2, axis=1) > 36).any():
            continue
        rep = backbone_report(cl, 6)
        assert set(rep.pivotal_edges) <= rep.backbone_edges
        assert verify_pivotal(cl, 6, rep.pivotal_edges)
        n += 1
    assert n > 0


def test_r_factor_floor():
    with pytest.raises(ValueError):
        backbone_count_curve(build_kernel("nn", 1), 1.0, [2], 3, 1, seed=0)


def test_dumbbell_with_mispaired_flow():
    # the triangle u-v-x hangs off the path through the single edge w-x
    edges = [(0, "w"), ("w", "b"), ("w", "x"), ("x", "u"), ("u", "v"), ("v", "x")]
    g = FiniteGraphSpec.build(edges, 1.0, boundary=["b"])
    conf = [True] * len(edges)
    bb, piv, und = classify_graph(g, conf)
    assert not und
    assert bb == {(0, "w"), ("w", "b")}
    assert ("u", "v") not in bb and ("v", "u") not in bb
    assert (bb, set(piv)) == enumerate_backbone_and_pivotal(g, conf)
