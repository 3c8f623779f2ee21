import numpy as np
import pytest

from dampinglab.damping_core import DampingSpec, gamma_array
from dampinglab.fitting import fit_log_exponent, fit_power_exponent
from dampinglab.kernel_calculus import (
    ConvolutionCase,
    predict_convolution,
    predict_log_convolution,
    quad_convolution,
    quad_log_convolution,
    quad_series,
    sharp_convolution,
    sharp_log_convolution,
)


def test_case_validation():
    with pytest.raises(ValueError):
        ConvolutionCase(0.0, 0.0, False, "nonsense")
    with pytest.raises(ValueError):
        ConvolutionCase(0.0, 0.0, True, "supercritical")
    with pytest.raises(ValueError):
        predict_convolution(-1.0, 1.0, -0.5)
    with pytest.raises(ValueError):
        predict_convolution(1.0, 1.0, 0.0)


def test_predict_supercritical():
    c = predict_convolution(4.0, 2.0, -0.5)
    assert (c.case_id, c.exponent, c.log_power) == ("supercritical", -1.0, 0.0)


def test_predict_critical():
    c = predict_convolution(2.0, 1.0, -0.5)
    assert c.case_id == "critical"
    assert c.exponent == pytest.approx(-0.5)
    assert c.log_power == 1.0


def test_predict_subcritical():
    c = predict_convolution(1.0, 0.5, -0.5)
    assert c.case_id == "subcritical"
    assert c.exponent == pytest.approx(0.25)


def test_predict_log_cases():
    a = predict_log_convolution(2.0, 3.0)
    assert a.log_power == pytest.approx(-2.0) and a.exponent == 0.0
    b = predict_log_convolution(2.0, 1.0)
    assert b.loglog_flag
    c = predict_log_convolution(2.0, 0.5)
    assert c.log_power == pytest.approx(0.5)


def test_quadrature_vanishes_at_origin():
    assert quad_convolution(4.0, 2.0, -0.5, 1e-9) < 1e-8
    assert quad_log_convolution(2.0, 3.0, 1e-9) < 1e-8


def test_endpoint_integrand_normalization():
    # Gamma(t, t) = 1 so the integrand at s = t is (1+t)^-gamma; a tiny window at the
    # right end therefore integrates to width * (1+t)^-gamma
    spec = DampingSpec(1.0, -0.5)
    assert float(gamma_array(spec, 7.0, 7.0)) == 1.0


def test_quadrature_matches_brute_force():
    from scipy.integrate import quad

    spec = DampingSpec(1.0, -0.5)
    t = 50.0
    f = lambda s: float(gamma_array(spec, s, t)) ** 2.0 * (1 + s) ** -1.0
    ref = quad(f, 0, t, epsabs=0, epsrel=1e-12, limit=400)[0]
    assert quad_convolution(2.0, 1.0, -0.5, t) == pytest.approx(ref, rel=1e-9)


def test_quadrature_monotone_in_gamma():
    t = np.geomspace(10, 1e5, 5)
    lo = quad_series(quad_convolution, t, 2.0, 0.5, -0.5)
    hi = quad_series(quad_convolution, t, 2.0, 2.0, -0.5)
    assert np.all(hi < lo)


def test_supercritical_slope():
    t = np.geomspace(1e3, 1e7, 13)
    vals = quad_series(quad_convolution, t, 4.0, 2.0, -0.5)
    assert fit_power_exponent(np.column_stack([t, vals])).exponent == pytest.approx(-1.0, abs=0.05)


def test_log_convolution_supercritical_slope():
    t = np.geomspace(1e4, 1e10, 13)
    vals = quad_series(quad_log_convolution, t, 2.0, 3.0)
    fit = fit_log_exponent(np.column_stack([t, vals]), min_span=0.0)
    assert fit.log_exponent == pytest.approx(-2.0, abs=0.1)


@pytest.mark.parametrize("beta,gam,lam", [(4.0, 0.5, -0.5), (4.0, 1.0, -0.25), (2.0, 2.0, -0.75)])
def test_sharp_rate_matches_quadrature(beta, gam, lam):
    t = np.geomspace(1e3, 1e7, 13)
    vals = quad_series(quad_convolution, t, beta, gam, lam)
    rate = sharp_convolution(beta, gam, lam)
    fit = fit_power_exponent(np.column_stack([t, vals]), log_correction=rate.log_power)
    assert fit.exponent == pytest.approx(rate.exponent, abs=0.05)


def test_sharp_log_rate_matches_quadrature():
    t = np.geomspace(1e4, 1e10, 13)
    vals = quad_series(quad_log_convolution, t, 2.0, 0.5)
    rate = sharp_log_convolution(2.0, 0.5)
    fit = fit_log_exponent(np.column_stack([t, vals]), min_span=0.0)
    # the log rate is expressed in powers of ln t
    assert fit.log_exponent == pytest.approx(rate.exponent, abs=0.1)
