import math

import numpy as np
import pytest

from percolab.errors import EstimatorError
from percolab.estimate import CurvePoint, EstimateWithError
from percolab.kernel import build_kernel
from percolab.observables import (ball_volume_curve, cluster_size_tail, estimate_pc_susceptibility,
                                  long_edge_decomposition, one_arm_curve, onearm_second_moment_bound,
                                  susceptibility)

NN1 = build_kernel("nn", 1)
P, Q = 1.4, 0.7
N = 40000


def close(est, exact, k=4.0):
    return abs(est.value - exact) <= k * est.stderr + 1e-12


def test_one_arm_curve_exact_and_monotone():
    c = one_arm_curve(NN1, P, (1, 2, 4), N, 1)
    for pt in c:
        r = pt.abscissa
        assert close(pt.estimate, 1 - (1 - Q ** (r + 1)) ** 2)
    v = [pt.value for pt in c]
    assert v == sorted(v, reverse=True)


def test_ball_volume_exact():
    for pt in ball_volume_curve(NN1, P, (0, 1, 3), N, 2):
        r = int(round(pt.abscissa))
        assert close(pt.estimate, 1 + 2 * sum(Q ** k for k in range(1, r + 1)))


def test_susceptibility_exact():
    assert close(susceptibility(NN1, P, N, 3), (1 + Q) / (1 - Q))


def test_size_tail_exact():
    def tail(s):
        # |C| = 1 + L + R with independent geometric arms, P(L >= a) = Q^a
        return sum((1 - Q) * Q ** a * Q ** max(s - 1 - a, 0) for a in range(200))
    for pt in cluster_size_tail(NN1, P, (1, 2, 5, 9), N, 4):
        assert close(pt.estimate, tail(int(pt.abscissa)))
    with pytest.raises(ValueError):
        cluster_size_tail(NN1, P, (4, 2), 10, 0)


def test_pc_by_susceptibility_in_one_dimension():
    res = estimate_pc_susceptibility(NN1, (1.6, 1.7, 1.8, 1.9), 20000, seed=5)
    assert abs(res.estimate.value - 2.0) < 0.05
    assert res.estimate.meta["slope"] < 0
    assert len(res.history) == 4
    with pytest.raises(ValueError):
        estimate_pc_susceptibility(NN1, (1.5,), 10)


def test_second_moment_is_a_lower_bound():
    lb = onearm_second_moment_bound(NN1, P, 2, 3, N, 6)
    arm = 1 - (1 - Q ** 3) ** 2
    assert lb.value <= arm + 4 * lb.stderr
    with pytest.raises(EstimatorError):
        onearm_second_moment_bound(NN1, 0.0, 2, 3, 100, 6)
    with pytest.raises(ValueError):
        onearm_second_moment_bound(NN1, P, 2, 1, 100, 6)


def test_long_edge_decomposition_bounds_one_arm():
    k = build_kernel("lrso", 1, L=1, alpha=0.5)
    rep = long_edge_decomposition(k, 0.9, 4, 2, 20000, 7, direct=True)
    assert rep.combined.value <= rep.direct.value + 4 * rep.direct.stderr
    assert 0 < rep.long_edge_exact_origin < 1


def test_estimate_container():
    e = EstimateWithError.from_samples([1.0, 2.0, 4.0], seed=3)
    assert math.isclose(e.value, 7 / 3)
    assert e.consistent()
    assert math.isclose(e.stderr, np.std([1, 2, 4], ddof=1) / math.sqrt(3))
    with pytest.raises(ValueError):
        EstimateWithError(1.0, -1.0, 1)
    with pytest.raises(ValueError):
        CurvePoint(0.0, e)
