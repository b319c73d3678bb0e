import itertools
import math

import numpy as np
import pytest

from percolab.diagrams import (ProxyGreen, SmoothingKernel, dhat_bound_report, open_triangle_bound,
                               proxy_volume_integral, quadrature_integral, smoothing_kernel_check,
                               smoothing_origin_exact, stratified_integral, triangle_estimate,
                               volume_doubling_ratio)
from percolab.kernel import build_kernel

NN1 = build_kernel("nn", 1)
NN2 = build_kernel("nn", 2)


def test_lambda_zero_values():
    assert triangle_estimate(ProxyGreen(NN2, 0.0), 100, 0).value == 1.0
    with pytest.warns(RuntimeWarning, match="diverge"):
        ot = open_triangle_bound(ProxyGreen(NN2, 0.0), 4000, 0)
    assert abs(ot.value) < 5 * ot.stderr + 1e-9
    sk = SmoothingKernel("g", 3, 2)
    assert proxy_volume_integral(ProxyGreen(NN2, 0.0), sk, 10, 0).value == sk.at_origin()


def test_quadrature_against_closed_form():
    lam = 0.9
    f = lambda k: 1.0 / (1.0 - lam * np.cos(k[:, 0]))  # noqa: E731
    assert math.isclose(quadrature_integral(f, 1), 1 / math.sqrt(1 - lam * lam), rel_tol=1e-9)
    with pytest.raises(ValueError):
        quadrature_integral(f, 3)


def test_stratified_monte_carlo_matches_quadrature():
    proxy = ProxyGreen(NN2, 0.95)
    ref = quadrature_integral(lambda k: proxy.chat(k) ** 3, 2)
    with pytest.warns(RuntimeWarning, match="diverge"):
        est = triangle_estimate(proxy, 40000, 1)
    assert abs(est.value - ref) < 4 * est.stderr
    plain = stratified_integral(lambda k: np.ones(len(k)), 3, 2000, 2)
    assert math.isclose(plain.value, 1.0, rel_tol=1e-9)


def test_triangle_grows_with_lambda():
    vals = [quadrature_integral(lambda k, l=l: ProxyGreen(NN1, l).chat(k) ** 3, 1) for l in (0.2, 0.5, 0.8)]
    assert vals == sorted(vals)


def test_smoothing_kernel_fourier_pair():
    for variant, r, d in [("g", 3, 1), ("g", 2.5, 2), ("h", 6, 2)]:
        sk = SmoothingKernel(variant, r, d)
        w = 2 * sk.half_width
        pts = np.array(list(itertools.product(range(-w, w + 1), repeat=d)), dtype=float)
        assert math.isclose(sk(pts).sum(), sk.fourier(np.zeros((1, d)))[0], rel_tol=1e-12)
        assert math.isclose(sk(np.zeros((1, d)))[0], smoothing_origin_exact(sk))
        assert np.all(sk.fourier(np.random.default_rng(0).uniform(-3, 3, (200, d))) >= 0)


def test_smoothing_check_reports():
    chk = smoothing_kernel_check(SmoothingKernel("h", 8, 2), 200)
    assert chk.support_ok and chk.criterion_ii
    assert math.isclose(chk.value_at_origin, smoothing_origin_exact(SmoothingKernel("h", 8, 2)))
    assert chk.criterion_i == (chk.worst_i["value"] <= 1 + 1e-12)
    with pytest.raises(ValueError):
        SmoothingKernel("h", 1, 2)
    with pytest.raises(ValueError):
        SmoothingKernel("x", 1, 2)


def test_proxy_validation():
    with pytest.raises(ValueError):
        ProxyGreen(NN2, 1.0)
    with pytest.raises(ValueError):
        proxy_volume_integral(ProxyGreen(NN1, 0.5), SmoothingKernel("g", 2, 2), 10, 0)


def test_dhat_bounds_nearest_neighbour():
    rep = dhat_bound_report(NN2, 2000, 0)
    assert rep.passed
    assert abs(rep.small_k_exponent - 2.0) < 0.05


def test_volume_doubling_target():
    ratio, se, target = volume_doubling_ratio(NN1, 8, 4000, 3)
    assert target == 4.0
    assert ratio > 1 and se >= 0
