"""Numerical checks of the relaxed Gronwall inequality.

The inequality constrains H only through the sandwich
c1 H - g <= F <= c2 H + g, so the check instantiates the extreme member
H = max(0, (F + g) / c1) and integrates the equality

    F' = -eta F + omega(t) H^theta + g(t).

Bounds are "ratio <= K" statements; K is calibrated on one seed scenario.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.integrate import solve_ivp


@dataclass
class GronwallScenario:
    eta: float
    theta: float
    c1: float
    c2: float
    omega_fn: Callable
    g_fn: Callable
    f0: float
    horizon: float
    monotone: bool = False
    label: str = ""

    def __post_init__(self):
        if not self.eta > 0:
            raise ValueError("eta must be positive")
        if not 0 < self.theta < 1:
            raise ValueError("theta must lie in (0, 1)")
        if not 0 < self.c1 <= self.c2:
            raise ValueError("need 0 < c1 <= c2")
        if not self.horizon > 0:
            raise ValueError("horizon must be positive")


@dataclass
class GronwallReport:
    t: np.ndarray
    F: np.ndarray
    H: np.ndarray
    sup_bound: np.ndarray
    decay_bound: np.ndarray | None
    sup_ratio: float
    decay_ratio: float | None
    K: float | None = None
    passed: bool | None = None
    notes: list = field(default_factory=list)


def _eval(fn, t):
    out = np.asarray(fn(t), float)
    return np.broadcast_to(out, np.shape(t)).astype(float)


def worst_case_h(sc: GronwallScenario, f, t):
    return np.maximum(0.0, (f + _eval(sc.g_fn, t)) / sc.c1)


def solve_equality(sc: GronwallScenario, points=2001, rtol=1e-10, atol=1e-14):
    """F and the worst-case H on a uniform grid over [0, horizon]."""
    t = np.linspace(0.0, sc.horizon, points)

    def rhs(tt, y):
        f = y[0]
        h = max(0.0, (f + float(sc.g_fn(tt))) / sc.c1)
        return [-sc.eta * f + float(sc.omega_fn(tt)) * h ** sc.theta + float(sc.g_fn(tt))]

    sol = solve_ivp(rhs, (0.0, sc.horizon), [sc.f0], method="LSODA", t_eval=t, rtol=rtol, atol=atol)
    if not sol.success:
        raise RuntimeError(f"equality integration failed: {sol.message}")
    f = sol.y[0]
    return t, f, worst_case_h(sc, f, t)


def sup_bound(sc: GronwallScenario, t):
    """max{F(0), sup_{s<=t} ((omega/eta)^(1/(1-theta)) + g (1 + 1/eta))} on the grid."""
    p = 1.0 / (1.0 - sc.theta)
    w = _eval(sc.omega_fn, t)
    g = _eval(sc.g_fn, t)
    inner = (w / sc.eta) ** p + g * (1.0 + 1.0 / sc.eta)
    return np.maximum(sc.f0, np.maximum.accumulate(inner))


def decay_bound(sc: GronwallScenario, t):
    """Four-term bound for monotone omega and g."""
    p = 1.0 / (1.0 - sc.theta)
    q = sc.eta ** -p
    r = 1.0 + 1.0 / sc.eta
    w0 = float(sc.omega_fn(0.0))
    g0 = float(sc.g_fn(0.0))
    wh = _eval(sc.omega_fn, 0.5 * t)
    gh = _eval(sc.g_fn, 0.5 * t)
    return (max(sc.f0, 0.0) * np.exp(-0.5 * sc.eta * t)
            + (q * w0 ** p + r * g0) * np.exp(-sc.eta * t / 8.0)
            + q * wh ** p + r * gh)


def _is_decreasing(fn, t):
    y = _eval(fn, t)
    return bool(np.all(np.diff(y) <= 1e-14 * np.maximum(1.0, np.abs(y[:-1]))))


def gronwall_check(sc: GronwallScenario, K=None, decay=None, points=2001) -> GronwallReport:
    """Integrate the equality case and compare F with the sup bound and H with the decay bound.

    ``decay`` defaults to ``sc.monotone``.  Asking for the decay bound with
    omega or g not decreasing on the grid raises.  With ``K`` the report
    carries a verdict, otherwise only the ratios.
    """
    decay = sc.monotone if decay is None else decay
    t = np.linspace(0.0, sc.horizon, points)
    if decay and not (_is_decreasing(sc.omega_fn, t) and _is_decreasing(sc.g_fn, t)):
        raise ValueError("decay bound needs monotonically decreasing omega and g")
    t, f, h = solve_equality(sc, points)
    sb = sup_bound(sc, t)
    with np.errstate(divide="ignore", invalid="ignore"):
        sr = float(np.max(np.where(sb > 0, f / sb, 0.0)))
    rep = GronwallReport(t, f, h, sb, None, sr, None, K)
    if decay:
        db = decay_bound(sc, t)
        rep.decay_bound = db
        with np.errstate(divide="ignore", invalid="ignore"):
            rep.decay_ratio = float(np.max(np.where(db > 0, h / db, 0.0)))
    if K is not None:
        rep.passed = rep.sup_ratio <= K and (rep.decay_ratio is None or rep.decay_ratio <= K)
    return rep


def random_monotone_scenario(rng: np.random.Generator, horizon=40.0) -> GronwallScenario:
    """Decreasing omega, g of power or exponential type with moderate constants."""
    eta = float(rng.uniform(0.5, 2.0))
    theta = float(rng.uniform(0.3, 0.7))
    c1 = float(rng.uniform(0.5, 1.0))
    c2 = c1 * float(rng.uniform(1.0, 4.0))
    a, pw = float(rng.uniform(0.05, 1.0)), float(rng.uniform(0.5, 2.0))
    c, qw = float(rng.uniform(0.0, 0.5)), float(rng.uniform(0.5, 2.0))
    if rng.random() < 0.5:
        omega = lambda t, a=a, pw=pw: a * (1.0 + np.asarray(t, float)) ** -pw
    else:
        omega = lambda t, a=a, pw=pw: a * np.exp(-0.2 * pw * np.asarray(t, float))
    if rng.random() < 0.5:
        g = lambda t, c=c, qw=qw: c * (1.0 + np.asarray(t, float)) ** -qw
    else:
        g = lambda t, c=c, qw=qw: c * np.exp(-0.2 * qw * np.asarray(t, float))
    f0 = float(rng.uniform(0.0, 2.0))
    return GronwallScenario(eta, theta, c1, c2, omega, g, f0, horizon, monotone=True, label="random")


def seed_scenario() -> GronwallScenario:
    """Reference case used to calibrate K."""
    return GronwallScenario(1.0, 0.5, 0.75, 1.5, lambda t: 0.5 * (1.0 + np.asarray(t, float)) ** -1.0,
                            lambda t: 0.25 * (1.0 + np.asarray(t, float)) ** -1.0, 1.0, 40.0,
                            monotone=True, label="seed")


def calibrate(sc: GronwallScenario | None = None, margin=2.0):
    """K = margin times the larger of the seed's two ratios."""
    rep = gronwall_check(sc or seed_scenario(), decay=True)
    return margin * max(rep.sup_ratio, rep.decay_ratio)


def random_suite(count=200, seed=0, K=None, horizon=40.0):
    rng = np.random.default_rng(seed)
    K = calibrate() if K is None else K
    return K, [gronwall_check(random_monotone_scenario(rng, horizon), K=K) for _ in range(count)]
