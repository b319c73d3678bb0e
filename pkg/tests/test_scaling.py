import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from percolab.estimate import CurvePoint, EstimateWithError
from percolab.kernel import build_kernel
from percolab.scaling import check_slope, curve_from_rows, exponent_report, fit_power_law


def curve(slope, amp=2.0, rel=0.0, xs=(4, 8, 16, 32, 64)):
    return [CurvePoint(x, EstimateWithError.from_value(amp * x ** slope, rel * amp * x ** slope, 100))
            for x in xs]


@given(st.floats(-3, 3), st.floats(0.1, 100))
def test_exact_power_law_recovered(slope, amp):
    f = fit_power_law(curve(slope, amp))
    assert math.isclose(f.exponent, slope, abs_tol=1e-9)
    assert math.isclose(f.amplitude, amp, rel_tol=1e-9)
    assert f.residual_diagnostic < 1e-6 or not f.curved


@given(st.floats(0.01, 100))
def test_slope_invariant_under_rescaling(c):
    pts = curve(-0.7, rel=0.05)
    scaled = [CurvePoint(p.abscissa, EstimateWithError.from_value(c * p.value, c * p.stderr, 100)) for p in pts]
    assert math.isclose(fit_power_law(pts).exponent, fit_power_law(scaled).exponent, rel_tol=1e-9)


def test_bootstrap_interval_covers_noise():
    rng = np.random.default_rng(1)
    pts = []
    for x in (8, 16, 32, 64, 128):
        v = x ** 0.5
        pts.append(CurvePoint(x, EstimateWithError.from_value(v * (1 + 0.02 * rng.standard_normal()),
                                                              0.02 * v, 100)))
    f = fit_power_law(pts)
    assert f.ci_low <= 0.5 <= f.ci_high
    assert f.ci_high - f.ci_low < 0.2


def test_curvature_flag_and_checks():
    pts = [CurvePoint(x, EstimateWithError.from_value(math.exp(0.5 * math.log(x) ** 2), 1e-3, 100))
           for x in (2, 4, 8, 16, 32)]
    assert fit_power_law(pts).curved
    assert not check_slope("x", curve(0.5, rel=0.01), 1.0, 0.1).passed
    assert check_slope("x", curve(0.5, rel=0.01), 0.45, 0.1).passed
    assert check_slope("x", curve(-0.2, rel=0.01), -0.5, 0.1, one_sided=True).passed


def test_input_validation():
    with pytest.raises(ValueError):
        fit_power_law(curve(1.0)[:3])
    with pytest.raises(ValueError):
        fit_power_law([CurvePoint(x, EstimateWithError.from_value(-1.0, 0.1, 1)) for x in (1, 2, 3, 4)])


def test_curve_rows_round_trip():
    pts = curve_from_rows([(1, 2.0, 0.1, 10), (2, 3.0, 0.2, 10)])
    assert [(p.abscissa, p.value, p.stderr) for p in pts] == [(1.0, 2.0, 0.1), (2.0, 3.0, 0.2)]


def test_report_flags_low_dimension():
    k = build_kernel("nn", 1)
    with pytest.warns(RuntimeWarning):
        rep = exponent_report(k, k.p_max, 50, 0, observables=["one_arm"])
    assert "non-critical" in " ".join(rep.flags)
    assert not rep.passed
