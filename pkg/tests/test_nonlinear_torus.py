import numpy as np
import pytest

from dampinglab.damping_core import DampingSpec
from dampinglab.mode_dynamics import fundamental_matrix
from dampinglab.nonlinear_torus import (
    CFLViolation,
    FieldState,
    InvariantViolation,
    SolverConfig,
    check_state,
    curl_norm,
    fourier_mode_state,
    linear_companion,
    random_initial_state,
    rho_to_v,
    rhs_eval,
    run,
    stable_dt,
    state_distance,
    state_norm,
    step,
    v_to_rho,
    weighted_functionals,
)

HALF = DampingSpec(1.0, -0.5)


def small(**kw):
    kw.setdefault("grid", 64)
    return SolverConfig(HALF, **kw)


def test_config_validation():
    with pytest.raises(ValueError):
        SolverConfig(HALF, grid=48)
    with pytest.raises(ValueError):
        SolverConfig(HALF, cfl=1.5)
    assert SolverConfig(HALF).delta == pytest.approx(0.5 / 8)
    assert SolverConfig(DampingSpec(1.0, -1.0)).delta == pytest.approx(0.5)


def test_density_transform():
    assert np.all(rho_to_v(np.ones(5), 1.4) == 0.0)
    assert rho_to_v(4.0, 2.0) == pytest.approx(2.0)
    rng = np.random.default_rng(0)
    rho = rng.uniform(0.2, 5.0, (16, 16))
    np.testing.assert_allclose(v_to_rho(rho_to_v(rho, 1.4), 1.4), rho, rtol=0, atol=1e-12)


def test_zero_state_is_stationary():
    cfg = small()
    z = FieldState(np.zeros((64, 64)), np.zeros((2, 64, 64)), 3.0)
    dv, du = rhs_eval(z, cfg)
    assert np.all(dv == 0) and np.all(du == 0)
    out = step(z, cfg, 0.01)
    assert np.all(out.v == 0) and np.all(out.u == 0)


def test_single_mode_tendency():
    cfg = small()
    amp = 0.05
    st = fourier_mode_state(cfg, amp, 1, 0)
    x = np.arange(64) * 2 * np.pi / 64
    xx = np.meshgrid(x, x, indexing="ij")[0]
    dv, du = rhs_eval(st, cfg)
    np.testing.assert_allclose(dv, 0.0, atol=1e-14)
    expected = amp * np.sin(xx) + cfg.varpi * amp ** 2 * np.cos(xx) * np.sin(xx)
    np.testing.assert_allclose(du[0], expected, atol=1e-14)
    np.testing.assert_allclose(du[1], 0.0, atol=1e-14)


def test_tendency_matches_time_difference():
    cfg = small()
    st = random_initial_state(cfg, 0.05, seed=2)
    dv, du = rhs_eval(st, cfg)
    h = 1e-3
    a = step(st, cfg, h)
    fd = (a.v - st.v) / h
    err = np.max(np.abs(fd - dv))
    assert err < 0.5 * h * np.max(np.abs(dv)) * 10


def test_step_order():
    cfg = small(t_end=0.4)
    s0 = random_initial_state(cfg, 0.1, seed=1)

    def go(dt):
        s = s0.copy()
        for _ in range(int(round(0.4 / dt))):
            s = step(s, cfg, dt)
        return s

    a, b, c = go(0.04), go(0.02), go(0.01)
    ratio = state_distance(a, b, cfg) / state_distance(b, c, cfg)
    assert np.log2(ratio) >= 2.0


def test_cfl_guard():
    cfg = small()
    st = random_initial_state(cfg, 0.01, seed=0)
    with pytest.raises(CFLViolation):
        step(st, cfg, 10 * cfg.dx)
    assert stable_dt(st, cfg) < cfg.dx


def test_invariant_guard():
    cfg = small()
    bad = FieldState(np.full((64, 64), 10.0), np.zeros((2, 64, 64)), 0.0)
    with pytest.raises(InvariantViolation):
        check_state(bad, cfg)


def test_linear_mode_matches_ode_integrator():
    cfg = small(t_end=10.0, cfl=0.125)
    amp = 1e-8
    rep = run(fourier_mode_state(cfg, amp, 1, 0), cfg, times=[0.0, 10.0])
    coef = np.fft.fft2(rep.final.v)[1, 0].real / (64 * 64 / 2) / amp
    g11 = fundamental_matrix("coupled", HALF, 1.0, 0.0, 10.0)[0, 0].real
    assert coef == pytest.approx(g11, rel=1e-6)


def test_random_state_properties():
    cfg = small()
    st = random_initial_state(cfg, 1e-3, seed=5)
    assert max(np.max(np.abs(st.v)), np.max(np.abs(st.u))) == pytest.approx(1e-3)
    assert abs(st.v.mean()) < 1e-18
    again = random_initial_state(cfg, 1e-3, seed=5)
    assert np.array_equal(st.v, again.v)
    irrot = random_initial_state(cfg, 1e-3, seed=5, vortical=False)
    assert curl_norm(irrot, cfg) < 1e-12 * state_norm(irrot, cfg)


def test_run_report_and_mean_budget(tmp_path):
    cfg = small(t_end=2.0, cfl=0.5)
    st = random_initial_state(cfg, 0.02, seed=4)
    rep = run(st, cfg)
    assert rep.mean_defect <= 1e-10
    for key in [k for k in rep.rows[0] if k.startswith(("Phi", "Psi"))]:
        vals = [r[key] for r in rep.rows]
        assert all(b >= a for a, b in zip(vals, vals[1:]))
    assert rep.energy_ratio[0] == pytest.approx(1.0)
    path = tmp_path / "r.csv"
    rep.to_csv(path)
    assert path.read_text().splitlines()[0].startswith("t,")


def test_functionals_present():
    cfg = small()
    vals = weighted_functionals(random_initial_state(cfg, 1e-3, seed=1), cfg)
    for key in ("Phi_1", "Psi_1", "Phi_2", "Psi_0", "norm_v", "norm_u"):
        assert key in vals


def test_discrepancy_scales_with_amplitude():
    cfg = small(t_end=3.0, cfl=0.5)
    out = []
    for amp in (1e-2, 5e-3):
        st = random_initial_state(cfg, amp, seed=3)
        a = run(st, cfg, times=[0.0, 3.0]).final
        b = run(st, linear_companion(cfg), times=[0.0, 3.0]).final
        out.append(state_distance(a, b, cfg) / state_norm(st, cfg))
    slope = np.log(out[0] / out[1]) / np.log(2.0)
    assert slope == pytest.approx(1.0, abs=0.2)
