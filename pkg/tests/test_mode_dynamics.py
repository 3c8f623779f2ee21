import math

import numpy as np
import pytest

from dampinglab.damping_core import DampingSpec, b_of_t, damping_integral
from dampinglab.mode_dynamics import (
    ModeState,
    PropagationInfo,
    ZonePartition,
    classify_zone,
    compute_multipliers,
    conjugation_defect,
    diagonalization_matrices,
    diagonalization_residual,
    elliptic_residual,
    elliptic_residual_naive,
    fundamental_matrix,
    hyperbolic_exit_time,
    integrate_mode,
    m_symbol,
    mode_matrix,
    peano_baker_green,
    propagate,
    sqrt_abs_m,
    vorticity_mode,
)

HALF = DampingSpec(2.0, -0.5)


def test_m_symbol_example():
    assert m_symbol("v", HALF, 0.0, 2.0) == pytest.approx(2.5, rel=1e-15)


def test_m_difference_is_b_prime(rng):
    spec = DampingSpec(1.2, -0.7)
    for t, xi in rng.uniform(0, 20, (10, 2)):
        b1 = 1.2 * 0.7 * (1 + t) ** -0.3
        assert m_symbol("u", spec, t, xi) - m_symbol("v", spec, t, xi) == pytest.approx(b1, rel=1e-12)


def test_m_tends_to_minus_infinity():
    vals = [m_symbol("v", HALF, t, 1.0) for t in (1e2, 1e4, 1e6)]
    assert vals[0] > vals[1] > vals[2] and vals[2] < -1e5


def test_zone_examples():
    part = ZonePartition(eps=0.125, big_n=2.0, t_ell=ZonePartition.default(HALF).t_ell, c0=0.5)
    assert classify_zone("v", HALF, part, 0.0, 2.0) == "Pd"
    assert classify_zone("v", HALF, part, part.t_ell + 1.0, 0.0) == "Ell"
    assert classify_zone("v", HALF, part, 0.0, 100.0) == "Hyp"


def test_partition_validation():
    with pytest.raises(ValueError):
        ZonePartition(eps=2.0, big_n=1.0)
    with pytest.raises(ValueError):
        ZonePartition.default(HALF, c0=5.0)


def test_low_frequency_becomes_elliptic_forever():
    part = ZonePartition.default(HALF)
    t = np.concatenate([[0.0], np.geomspace(1e-2, 1e8, 200)])
    for xi in np.linspace(0.01, part.c0, 8):
        labels = [classify_zone("v", HALF, part, tt, xi) for tt in t]
        first = labels.index("Ell")
        assert all(lb == "Ell" for lb in labels[first:])


def test_hyperbolic_exit_time():
    part = ZonePartition.default(HALF)
    assert hyperbolic_exit_time("v", HALF, part, 0.1) is None
    xis = np.linspace(5.0, 50.0, 8)
    times = [hyperbolic_exit_time("v", HALF, part, x) for x in xis]
    assert all(b >= a for a, b in zip(times, times[1:]))
    t = times[3]
    r = math.sqrt(abs(m_symbol("v", HALF, t, xis[3])))
    b = b_of_t(HALF, t)
    assert abs(r - part.big_n * b) / b <= 1e-8


def test_sqrt_m_derivative_matches_finite_differences():
    spec = DampingSpec(1.0, -0.5)
    t, h, xi = 40.0, 1e-4, 0.3
    x, x1, x2 = sqrt_abs_m("v", spec, t, xi)
    xp = sqrt_abs_m("v", spec, t + h, xi)[0]
    xm = sqrt_abs_m("v", spec, t - h, xi)[0]
    assert x1 == pytest.approx((xp - xm) / (2 * h), rel=1e-6)


def test_zero_frequency_decouples():
    spec = DampingSpec(0.7, -0.5)
    init = ModeState(0.0, 1.0 + 0.5j, 2.0 - 1j, 0.0)
    out = integrate_mode("coupled", spec, 0.0, 1.0, 30.0, init)
    assert out.a == pytest.approx(init.a, abs=1e-12)
    assert out.b_comp == pytest.approx(init.b_comp * math.exp(-damping_integral(spec, 1.0, 30.0)), rel=1e-8)


def test_undamped_energy_conserved():
    spec = DampingSpec.undamped()
    xi = 1.7
    out = integrate_mode("wave_v", spec, xi, 0.0, 50.0, ModeState(xi, 1.0, 0.3, 0.0))
    e0 = 1.0 + (0.3 / xi) ** 2
    e1 = abs(out.a) ** 2 + abs(out.b_comp / xi) ** 2
    assert e1 == pytest.approx(e0, abs=1e-8)


def test_undamped_matches_closed_form():
    spec = DampingSpec.undamped()
    xi, t = 2.3, 17.0
    g = fundamental_matrix("wave_v", spec, xi, 0.0, t)
    ref = np.array([[math.cos(xi * t), math.sin(xi * t) / xi], [-xi * math.sin(xi * t), math.cos(xi * t)]])
    np.testing.assert_allclose(g.real, ref, atol=1e-8)


def test_identity_at_equal_times():
    for system in ("coupled", "wave_v", "wave_u"):
        g = fundamental_matrix(system, HALF, 0.8, 3.0, 3.0)
        np.testing.assert_allclose(g, np.eye(2), atol=1e-15)
    m = compute_multipliers("wave_u", HALF, 0.8, 2.0, 2.0)
    assert m.phi1 == pytest.approx(1.0) and m.phi2 == pytest.approx(0.0)
    with pytest.raises(ValueError):
        compute_multipliers("coupled", HALF, 0.8, 2.0, 3.0)


def test_propagate_shape_and_reality():
    xi = np.array([[0.1, 1.0], [3.0, 10.0]])
    t = [1.0, 10.0, 100.0]
    g = propagate("coupled", HALF, xi, 0.0, t)
    assert g.shape == (3, 2, 2, 2, 2)
    assert np.max(np.abs(g.imag)) < 1e-12


def test_determinant_law_long_run():
    spec = DampingSpec(1.0, -1.0)
    info = PropagationInfo()
    propagate("coupled", spec, np.geomspace(1e-3, 10, 30), 0.0, np.geomspace(1, 1e8, 9), info=info)
    assert info.det_points > 0
    assert info.det_defect <= 1e-6


def test_peano_baker_identity_and_first_order():
    g, _ = peano_baker_green(HALF, 0.6, 1.0, 1.0)
    np.testing.assert_allclose(g, np.eye(2))
    s, h = 2.0, 1e-3
    g1, _ = peano_baker_green(HALF, 0.6, s, s + h, terms=1)
    expected = np.eye(2) + h * mode_matrix("coupled", HALF, s + h / 2, 0.6)
    np.testing.assert_allclose(g1, expected, atol=h ** 3)


def test_peano_baker_matches_integrator(rng):
    for _ in range(20):
        spec = DampingSpec(float(rng.uniform(0.1, 2.0)), float(rng.choice([-0.25, -0.5, -1.0])))
        xi = float(rng.uniform(0.0, 1.0))
        s = float(rng.uniform(0, 20))
        t = s + float(rng.uniform(0, 0.1))
        ref, _ = peano_baker_green(spec, xi, s, t)
        got = fundamental_matrix("coupled", spec, xi, s, t)
        np.testing.assert_allclose(got, ref, atol=1e-8)


def test_elliptic_residual_requires_elliptic_point():
    with pytest.raises(ValueError):
        elliptic_residual("v", HALF, 0.0, 5.0)


def test_elliptic_residual_zero_frequency_u():
    part = ZonePartition.default(HALF)
    val = elliptic_residual("u", HALF, part.t_ell + 10.0, 0.0, part)
    assert np.isfinite(val) and val > 0


def test_stable_residual_agrees_with_naive_form():
    spec = DampingSpec(1.0, -0.5)
    for t in (20.0, 50.0, 100.0):
        a = elliptic_residual("v", spec, t, 0.1)
        b = abs(elliptic_residual_naive("v", spec, t, 0.1))
        assert a == pytest.approx(b, rel=1e-6)


def test_residual_remainder_slope():
    from dampinglab.fitting import fit_power_exponent

    spec = DampingSpec(1.0, -0.5)
    t = np.geomspace(1e2, 1e6, 13)
    r = [elliptic_residual("v", spec, tt, 0.1, part="remainder") for tt in t]
    assert fit_power_exponent(np.column_stack([t, r])).exponent == pytest.approx(-2.5, abs=0.1)


def test_diagonalization_identity_and_r1():
    spec = DampingSpec(1.0, -0.5)
    defect, r1 = diagonalization_residual(spec, 200.0, 0.1)
    assert defect <= 1e-10
    assert r1 > 0
    mats = diagonalization_matrices(spec, 200.0, 0.1)
    f0 = mats["F0"]
    assert f0[0, 1] == 0 and f0[1, 0] == 0 and f0[0, 0] == f0[1, 1]
    x, x1, _ = sqrt_abs_m("v", spec, 200.0, 0.1)
    assert f0[0, 0] == pytest.approx(-1j * x1 / (2 * x))


def test_conjugation_identity_exact_at_quarter():
    spec = DampingSpec(1.0, -0.5)
    assert conjugation_defect(spec, 300.0, 0.1, n1_scale=0.25) < 1e-12


def test_vorticity_mode():
    spec = DampingSpec(1.0, -1.0)
    assert vorticity_mode(spec, 2.0, 2.0, 1 + 1j) == 1 + 1j
    w = vorticity_mode(spec, 0.0, 9.0, 1.0)
    assert math.log(w) == pytest.approx(-49.5, rel=1e-12)
    half = DampingSpec(1.3, -0.5)
    law = -1.3 * ((1 + 7.0) ** 1.5 - (1 + 2.0) ** 1.5) / 1.5
    assert math.log(vorticity_mode(half, 2.0, 7.0, 1.0)) == pytest.approx(law, rel=1e-12)
