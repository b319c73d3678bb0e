import math

import numpy as np
import pytest

from percolab.errors import EstimatorError
from percolab.iic import (CylinderEvent, estimate_event_probability, estimate_one_arm_conditioned,
                          estimate_size_biased, estimate_two_point_conditioned, size_biased_ball_volume)
from percolab.kernel import build_kernel
from percolab.oracle import Enumeration, FiniteGraphSpec, enumerate_conditional
from percolab.percolation import GraphModel

NN2 = build_kernel("nn", 2)


@pytest.fixture
def graph():
    edges = [(0, 1), (1, 2), (0, 3), (3, 2), (1, 3), (2, 4), (3, 5), (5, 4)]
    probs = [0.7, 0.5, 0.6, 0.4, 0.3, 0.8, 0.5, 0.6]
    return FiniteGraphSpec.build(edges, probs, boundary=[4])


def within(est, exact, k=4.0):
    return abs(est.value - exact) <= k * est.stderr


def test_one_arm_conditioning_matches_enumeration(graph):
    ev = CylinderEvent.from_dnf([(0, 1), (1, 3)], [[(0, True), (1, False)], [(1, True)]])
    en = Enumeration(graph)
    exact = enumerate_conditional(graph, ev, en.reaches_boundary())
    est = estimate_one_arm_conditioned(GraphModel(graph), None, 0, ev, 20000, 3)
    assert within(est, exact)


def test_two_point_conditioning_matches_enumeration(graph):
    ev = CylinderEvent.edge_open(3, 5)
    en = Enumeration(graph)
    exact = enumerate_conditional(graph, ev, en.connected(5))
    est = estimate_two_point_conditioned(GraphModel(graph), None, 5, ev, 20000, 4)
    assert within(est, exact)


def test_size_biased_matches_enumeration(graph):
    ev = CylinderEvent.edge_open(0, 1)
    en = Enumeration(graph)
    size = en.cluster_size()
    exact = en.expectation(size * en.edge_open(0)) / en.expectation(size)
    est = estimate_size_biased(GraphModel(graph), None, ev, 40000, 5)
    assert within(est, exact)


def test_unconditioned_event_probability():
    q = 1.2 / 4
    est = estimate_event_probability(NN2, 1.2, CylinderEvent.edge_open((0, 0), (1, 0)), 40000, 6)
    assert within(est, q)
    ev = CylinderEvent.from_dnf([((0, 0), (1, 0)), ((0, 0), (0, 1))], [[(0, True), (1, True)]])
    assert within(estimate_event_probability(NN2, 1.2, ev, 40000, 7), q * q)
    assert estimate_event_probability(NN2, 1.2, CylinderEvent.full_space(), 10, 0).value == 1.0


def test_builtin_events():
    ev = CylinderEvent.connected_in_box(NN2, (1, 0), 1)
    row_direct = np.array([(set(e) == {(0, 0), (1, 0)}) for e in ev.edges])
    assert ev.evaluate(row_direct)[0]
    assert not ev.evaluate(np.zeros(len(ev.edges), dtype=bool))[0]
    vol = CylinderEvent.local_volume_at_least(NN2, 1, 1)
    assert vol.evaluate(np.zeros(len(vol.edges), dtype=bool))[0]
    with pytest.raises(ValueError):
        CylinderEvent.connected_in_box(NN2, (5, 0), 1)
    with pytest.raises(ValueError):
        CylinderEvent.from_dnf([((0, 0), (1, 0))], [[(3, True)]])
    with pytest.raises(ValueError):
        CylinderEvent.from_spec({"type": "nope"})
    assert CylinderEvent.from_spec({"type": "edge-open", "edge": [[0, 0], [0, 1]]}).edges == [((0, 0), (0, 1))]


def test_lattice_scale_checks():
    ev = CylinderEvent.edge_open((0, 0), (1, 0))
    with pytest.raises(ValueError):
        estimate_one_arm_conditioned(NN2, 1.0, 1, ev, 10, 0)
    with pytest.raises(ValueError):
        estimate_two_point_conditioned(NN2, 1.0, (1, 0), ev, 10, 0)


def test_size_biased_ess_guard():
    with pytest.raises(EstimatorError):
        estimate_size_biased(NN2, 1.0, CylinderEvent.full_space(), 20, 0)


def test_size_biased_ball_volume_dominates_origin():
    curve = size_biased_ball_volume(NN2, 1.2, (1, 3), 4000, 8)
    assert curve[0].value >= 1.0
    assert curve[1].value >= curve[0].value
