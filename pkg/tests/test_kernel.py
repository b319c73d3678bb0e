import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from percolab.kernel import (Family, TorusPoint, build_kernel, cos_polylog, cos_tail, edge_probability,
                             fourier_d, lattice_zeta, long_edge_rate, truncation_tail_constant)


def test_nearest_neighbour_normalisation():
    for d in (1, 2, 3, 5):
        k = build_kernel("nn", d)
        e = np.zeros(d, dtype=int)
        e[0] = 1
        assert k.D(e) == pytest.approx(1 / (2 * d))
        assert k.D(2 * e) == 0.0
        assert k.D(np.zeros(d, dtype=int)) == 0.0
        assert k.p_max == pytest.approx(2 * d)


def test_finite_range_box():
    k = build_kernel("frso", 2, L=3)
    assert k.normalizer == 48.0
    assert k.D([3, -3]) == pytest.approx(1 / 48)
    assert k.D([4, 0]) == 0.0
    assert k.support_size == 48


def test_long_range_weights_and_tail():
    k = build_kernel("lrso", 1, L=2, alpha=1.5)
    assert k.family is Family.LONG_RANGE
    # flat inside the L-ball, power law outside
    assert k.D([1]) == pytest.approx(k.D([2]))
    assert k.D([8]) / k.D([4]) == pytest.approx(2.0 ** -2.5)
    assert 0 < k.tail_mass_bound < 1e-15
    assert k.spread_exponent == 1.5
    assert build_kernel("lrso", 2, L=1, alpha=3.0).spread_exponent == 2.0


def test_long_range_mass_sums_to_one_when_enumerable():
    k = build_kernel("lrso", 2, L=2, alpha=1.0, trunc_radius=30)
    xs = np.array([(a, b) for a in range(-30, 31) for b in range(-30, 31)])
    assert math.fsum(k.D(xs).tolist()) == pytest.approx(1.0, abs=1e-12)
    assert k.truncated_mass(30) == 1.0
    assert k.truncated_mass(5) < 1.0


@pytest.mark.parametrize("bad", [dict(family="nn", d=0), dict(family="frso", d=2, L=0),
                                 dict(family="lrso", d=1, alpha=None), dict(family="lrso", d=1, alpha=2.0),
                                 dict(family="lrso", d=2, alpha=1.0, trunc_radius=1.0),
                                 dict(family="bogus", d=1)])
def test_invalid_kernels(bad):
    with pytest.raises(ValueError):
        build_kernel(**bad)


def test_fourier_nn_closed_form():
    k = build_kernel("nn", 2)
    assert fourier_d(k, TorusPoint((math.pi, math.pi))) == pytest.approx(-1.0)
    kk = np.array([[0.3, -1.1]])
    assert fourier_d(k, kk)[0] == pytest.approx((math.cos(0.3) + math.cos(1.1)) / 2)


def test_fourier_box_matches_direct_sum(rng):
    k = build_kernel("frso", 2, L=2)
    pts = np.array([(a, b) for a in range(-2, 3) for b in range(-2, 3) if (a, b) != (0, 0)])
    kk = rng.uniform(-math.pi, math.pi, size=(20, 2))
    direct = np.cos(kk @ pts.T).mean(axis=1)
    np.testing.assert_allclose(fourier_d(k, kk), direct, atol=1e-13)


def test_fourier_far_field_1d_matches_direct_sum():
    # far-field route (polylog minus head minus tail) against brute force on a finite horizon
    kf = build_kernel("lrso", 1, L=3, alpha=0.7, trunc_radius=5000)
    x = np.arange(1, 5001)
    w = np.maximum(x / 3, 1.0) ** -1.7
    for k in (0.0, 0.01, 0.4, 2.9):
        direct = 2 * np.sum(np.cos(k * x) * w) / (2 * w.sum())
        assert fourier_d(kf, np.array([[k]]))[0] == pytest.approx(direct, abs=1e-9)


def test_cos_polylog_and_tail():
    s = 2.5
    n = np.arange(1, 200_001)
    for k in (0.2, 1.0, 3.0):
        head = np.sum(np.cos(k * n) * n ** -s)
        tail = cos_tail(s, 200_000, np.array([k]))[0]
        assert cos_polylog(s, np.array([k]))[0] == pytest.approx(head + tail, abs=1e-10)


def test_lattice_zeta_1d():
    from scipy.special import zeta
    assert lattice_zeta(1, 3.0) == pytest.approx(2 * zeta(3.0))


def test_torus_wrap():
    t = TorusPoint.wrap([3 * math.pi, -math.pi, 0.5])
    assert t.k[0] == pytest.approx(math.pi) and t.k[1] == pytest.approx(math.pi) and t.k[2] == 0.5
    with pytest.raises(ValueError):
        TorusPoint((4.0,))


def test_long_edge_rate_and_tail_constant():
    k = build_kernel("lrso", 1, L=1, alpha=1.0)
    zeta = truncation_tail_constant(k, [4, 8, 16])
    assert zeta > 0
    for r in (4, 8, 16):
        assert 1 - k.truncated_mass(r) >= zeta * r ** -1.0 - 1e-15
    assert long_edge_rate(k, 0.0, 4) == 0.0
    assert long_edge_rate(k, 1.0, 4) > long_edge_rate(k, 1.0, 8)


@given(st.integers(1, 3), st.integers(1, 3), st.floats(0, 1))
def test_edge_probability_bounded(d, L, frac):
    k = build_kernel("frso", d, L=L)
    p = frac * k.p_max
    x = np.zeros(d, dtype=int)
    y = x.copy()
    y[0] = 1
    q = edge_probability(k, p, x, y)
    assert 0.0 <= q <= 1.0
    assert q == pytest.approx(p / k.normalizer)


@given(st.lists(st.floats(-math.pi, math.pi), min_size=2, max_size=2))
def test_fourier_bounded_by_one(kvec):
    for k in (build_kernel("nn", 2), build_kernel("frso", 2, L=2)):
        v = fourier_d(k, np.array([kvec]))[0]
        assert -1.0 - 1e-12 <= v <= 1.0 + 1e-12
