import math

import numpy as np
import pytest
from scipy.integrate import quad

from dampinglab.damping_core import (
    DampingSpec,
    b_derivative,
    b_of_t,
    damping_integral,
    gamma,
    gamma_array,
    gamma_bracket,
    inverse_damping_integral,
    t_of_tau,
    tau_of_t,
)


def test_spec_validation():
    with pytest.raises(ValueError):
        DampingSpec(0.0, -0.5)
    with pytest.raises(ValueError):
        DampingSpec(1.0, -1.5)
    with pytest.warns(UserWarning):
        DampingSpec(1.0, 0.5)
    assert DampingSpec(1.0, -1.0).critical
    assert not DampingSpec(1.0, -0.5).critical


@pytest.mark.parametrize("mu,lam,t,expected", [(2.0, -0.5, 3.0, 4.0), (1.0, -1.0, 0.0, 1.0), (1.0, -1.0, 9.0, 10.0)])
def test_b_closed_form(mu, lam, t, expected):
    assert b_of_t(DampingSpec(mu, lam), t) == pytest.approx(expected, rel=1e-15)


def test_b_derivatives_match_finite_differences():
    spec = DampingSpec(1.3, -0.7)
    t, h = 2.5, 1e-5
    fd1 = (b_of_t(spec, t + h) - b_of_t(spec, t - h)) / (2 * h)
    h = 1e-3
    fd2 = (b_of_t(spec, t + h) - 2 * b_of_t(spec, t) + b_of_t(spec, t - h)) / h ** 2
    assert b_derivative(spec, t, 1) == pytest.approx(fd1, rel=1e-8)
    assert b_derivative(spec, t, 2) == pytest.approx(fd2, rel=1e-5)


def test_damping_integral_examples():
    spec = DampingSpec(1.5, -1.0)
    assert damping_integral(spec, 3.0, 3.0) == 0.0
    assert damping_integral(spec, 0.0, 1.0) == pytest.approx(2.25, rel=1e-15)


def test_damping_integral_against_quadrature(rng):
    for _ in range(50):
        spec = DampingSpec(float(rng.uniform(0.1, 2.0)), float(rng.choice([-1.0, -0.75, -0.5, -0.25])))
        s = float(rng.uniform(0, 50))
        t = s + float(rng.uniform(0, 50))
        ref = quad(lambda x: b_of_t(spec, x), s, t, epsabs=0, epsrel=1e-13, limit=200)[0]
        assert damping_integral(spec, s, t) == pytest.approx(ref, rel=1e-12)
        ref_inv = quad(lambda x: 1.0 / b_of_t(spec, x), s, t, epsabs=0, epsrel=1e-13, limit=200)[0]
        assert inverse_damping_integral(spec, s, t) == pytest.approx(ref_inv, rel=1e-12)


def test_inverse_integral_examples():
    spec = DampingSpec(1.0, -1.0)
    assert inverse_damping_integral(spec, 2.0, 2.0) == 0.0
    assert inverse_damping_integral(spec, 0.0, math.e - 1.0) == pytest.approx(1.0, rel=1e-15)


def test_inverse_integral_continuous_at_critical():
    near = inverse_damping_integral(DampingSpec(1.0, -1.0 + 1e-8), 0.0, 100.0)
    at = inverse_damping_integral(DampingSpec(1.0, -1.0), 0.0, 100.0)
    assert near == pytest.approx(at, rel=1e-6)


def test_guard_band_matches_direct_formula():
    # just outside the band the direct formula is still accurate; the series must agree with it
    lam_in, lam_out = -1.0 + 5e-7, -1.0 + 2e-6
    a = inverse_damping_integral(DampingSpec(1.0, lam_in), 1.0, 1e4)
    b = inverse_damping_integral(DampingSpec(1.0, lam_out), 1.0, 1e4)
    assert a == pytest.approx(b, rel=1e-5)


def test_gamma_examples():
    half = DampingSpec(1.0, -0.5)
    assert float(gamma(half, 2.0, 2.0)) == 1.0
    assert float(gamma(half, 0.0, 3.0)) == pytest.approx(2 ** -0.5, rel=1e-15)
    assert float(gamma(DampingSpec(1.0, -1.0), 0.0, math.e - 1)) == pytest.approx(2 ** -0.5, rel=1e-15)


def test_gamma_links_to_inverse_integral(rng):
    for lam in (-0.25, -0.5, -0.9, -1.0):
        mu = float(rng.uniform(0.2, 2.0))
        spec = DampingSpec(mu, lam)
        s = rng.uniform(0, 10, 20)
        t = s + rng.uniform(0, 1e3, 20)
        lhs = np.asarray(gamma_array(spec, s, t)) ** -2
        factor = mu if lam == -1.0 else mu * (1 + lam)
        rhs = 1.0 + factor * np.asarray(inverse_damping_integral(spec, s, t))
        np.testing.assert_allclose(lhs, rhs, rtol=1e-13)


def test_integrals_are_additive(rng):
    spec = DampingSpec(0.8, -0.6)
    for _ in range(20):
        s, u, t = np.sort(rng.uniform(0, 100, 3))
        assert damping_integral(spec, s, u) + damping_integral(spec, u, t) == pytest.approx(
            damping_integral(spec, s, t), rel=1e-12)
        assert inverse_damping_integral(spec, s, u) + inverse_damping_integral(spec, u, t) == pytest.approx(
            inverse_damping_integral(spec, s, t), rel=1e-12)


def test_gamma_monotone():
    spec = DampingSpec(1.0, -0.5)
    t = np.linspace(1.0, 50.0, 100)
    g_t = np.asarray(gamma_array(spec, 1.0, t))
    assert np.all(np.diff(g_t) <= 0)
    s = np.linspace(0.0, 1.0, 50)
    g_s = np.asarray(gamma_array(spec, s, 5.0))
    assert np.all(np.diff(g_s) >= 0)


def test_bracket_large_time_precision():
    spec = DampingSpec(1.0, -0.5)
    assert gamma_bracket(spec, 1e10, 1e10 + 1.0) > 0
    assert gamma_bracket(spec, 0.0, 0.0) == 0.0


def test_interval_order_enforced():
    with pytest.raises(ValueError):
        damping_integral(DampingSpec(1.0, -0.5), 2.0, 1.0)


def test_tau_roundtrip():
    t = np.geomspace(1e-6, 1e10, 30)
    np.testing.assert_allclose(t_of_tau(tau_of_t(t)), t, rtol=1e-14)
