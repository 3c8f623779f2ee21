"""Pseudo-spectral solver for the damped isentropic Euler system on a 2-D torus.

Variables are v = (2/(g-1)) (rho^((g-1)/2) - 1) and the velocity u:

    v_t + div u = -u . grad v - w v div u
    u_t + grad v + b(t) u = -(u . grad) u - w v grad v,      w = (g-1)/2

Derivatives are spectral, products are taken on the grid, and the damping
is removed by an integrating factor so the explicit RK4 stages never see it.
On the torus the low-frequency decay of the whole space does not exist, so
the runs here are consistency checks, not rate measurements.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
import json
import math
import time

import numpy as np
from scipy import fft as sfft

from .damping_core import DampingSpec, b_of_t, damping_integral


class InvariantViolation(RuntimeError):
    pass


class CFLViolation(ValueError):
    pass


def rho_to_v(rho, gamma):
    rho = np.asarray(rho, float)
    if np.any(rho <= 0):
        raise ValueError("density must be positive")
    return 2.0 / (gamma - 1.0) * (rho ** (0.5 * (gamma - 1.0)) - 1.0)


def v_to_rho(v, gamma):
    base = 1.0 + 0.5 * (gamma - 1.0) * np.asarray(v, float)
    if np.any(base <= 0):
        raise ValueError("v is outside the range of the density transform")
    return base ** (2.0 / (gamma - 1.0))


@dataclass
class FieldState:
    v: np.ndarray
    u: np.ndarray  # shape (2, N, N)
    t: float = 0.0

    def copy(self):
        return FieldState(self.v.copy(), self.u.copy(), self.t)


@dataclass
class SolverConfig:
    spec: DampingSpec
    grid: int = 128
    box: float = 2 * math.pi
    gamma: float = 1.4
    cfl: float = 0.5
    dealias: bool = True
    t_end: float = 200.0
    delta: float | None = None
    k_max: int = 2
    energy_order: int = 3
    nonlinear: bool = True
    samples: int = 60

    def __post_init__(self):
        n = self.grid
        if n < 64 or n & (n - 1):
            raise ValueError("grid must be a power of two >= 64")
        if not 0 < self.cfl < 1:
            raise ValueError("CFL fraction must lie in (0, 1)")
        if not self.gamma > 1:
            raise ValueError("gamma must exceed 1")
        if self.delta is None:
            lam = self.spec.lam
            self.delta = 2 / 4 if self.spec.critical else (1.0 + lam) / 8.0

    @property
    def varpi(self):
        return 0.5 * (self.gamma - 1.0)

    @property
    def dx(self):
        return self.box / self.grid


class Spectral:
    """Wavenumbers, dealiasing mask and transforms for one grid."""

    def __init__(self, n, box, dealias=True):
        self.n = n
        k = 2 * np.pi / box * np.fft.fftfreq(n, 1.0 / n)
        kr = 2 * np.pi / box * np.fft.rfftfreq(n, 1.0 / n)
        self.kx, self.ky = np.meshgrid(k, kr, indexing="ij")
        self.k2 = self.kx ** 2 + self.ky ** 2
        cut = n / 3.0
        ix = np.abs(np.fft.fftfreq(n, 1.0 / n))
        iy = np.fft.rfftfreq(n, 1.0 / n)
        keep = (ix[:, None] < cut) & (iy[None, :] < cut)
        self.mask = keep if dealias else np.ones_like(keep)
        # rfft half-plane weights for Parseval sums
        w = np.full(self.kx.shape, 2.0)
        w[:, 0] = 1.0
        if n % 2 == 0:
            w[:, -1] = 1.0
        self.half = w
        self._weights = {}

    def fft(self, f):
        return sfft.rfft2(f)

    def ifft(self, fh):
        return sfft.irfft2(fh, s=(self.n, self.n))

    def multi_index_weight(self, k):
        """sum over |a| = k of kx^(2 a1) ky^(2 a2)."""
        if k not in self._weights:
            self._weights[k] = sum(self.kx ** (2 * j) * self.ky ** (2 * (k - j)) for j in range(k + 1))
        return self._weights[k]

    def sobolev_weight(self, m):
        key = ("H", m)
        if key not in self._weights:
            self._weights[key] = sum(self.multi_index_weight(j) for j in range(m + 1))
        return self._weights[key]

    def grad(self, fh):
        return 1j * self.kx * fh, 1j * self.ky * fh

    def l2sq(self, fh, box, weight=None):
        """int |f|^2 dx from an rfft2 spectrum."""
        a = np.abs(fh) ** 2 * self.half
        if weight is not None:
            a = a * weight
        return float(a.sum()) * box ** 2 / self.n ** 4


_CACHE: dict = {}


def _spectral(config: SolverConfig) -> Spectral:
    key = (config.grid, config.box, config.dealias)
    if key not in _CACHE:
        _CACHE[key] = Spectral(*key)
    return _CACHE[key]


def check_state(state: FieldState, config: SolverConfig):
    vmax = float(np.max(np.abs(state.v)))
    if not np.isfinite(vmax) or not np.all(np.isfinite(state.u)):
        raise InvariantViolation(f"non-finite field at t={state.t:.6g}")
    if config.varpi * vmax >= 0.5:
        raise InvariantViolation(
            f"|v|_inf = {vmax:.4g} at t={state.t:.6g} violates 1 + w v > 1/2 (w={config.varpi:.3g})")


def _nonlinear_terms(vh, uh, sp: Spectral, varpi):
    m = sp.mask
    vh, uh = vh * m, uh * m
    ikx, iky = 1j * sp.kx, 1j * sp.ky
    spec = np.stack([vh, uh[0], uh[1], ikx * vh, iky * vh, ikx * uh[0], iky * uh[0], ikx * uh[1], iky * uh[1]])
    v, ux, uy, vx, vy, uxx, uxy, uyx, uyy = sp.ifft(spec)
    div = uxx + uyy
    q1 = -(ux * vx + uy * vy) - varpi * v * div
    q2x = -(ux * uxx + uy * uxy) - varpi * v * vx
    q2y = -(ux * uyx + uy * uyy) - varpi * v * vy
    q = sp.fft(np.stack([q1, q2x, q2y])) * m
    return q[0], q[1:]


def _tendency_hat(vh, uh, sp: Spectral, config: SolverConfig, q1_out=None):
    """Spectral tendency of everything except the damping term."""
    dv = -(1j * sp.kx * uh[0] + 1j * sp.ky * uh[1])
    gx, gy = sp.grad(vh)
    du = -np.stack([gx, gy])
    if config.nonlinear:
        q1, q2 = _nonlinear_terms(vh, uh, sp, config.varpi)
        dv = dv + q1
        du = du + q2
        if q1_out is not None:
            q1_out.append(q1[0, 0].real)
    return dv, du


def rhs_eval(state: FieldState, config: SolverConfig):
    """(dv/dt, du/dt) on the grid, damping included."""
    check_state(state, config)
    sp = _spectral(config)
    vh = sp.fft(state.v)
    uh = np.stack([sp.fft(state.u[0]), sp.fft(state.u[1])])
    dv, du = _tendency_hat(vh, uh, sp, config)
    b = b_of_t(config.spec, state.t)
    return sp.ifft(dv), np.stack([sp.ifft(du[0]), sp.ifft(du[1])]) - b * state.u


def stable_dt(state: FieldState, config: SolverConfig):
    speed = 1.0 + config.varpi * float(np.max(np.abs(state.v))) + float(np.max(np.hypot(state.u[0], state.u[1])))
    return config.cfl * config.dx / speed


def _step_hat(vh, uh, t, dt, sp, config, budget=None):
    """One integrating-factor RK4 step in spectral space.

    With U = exp(B(t) - B(t_n)) u the damping drops out; the RK4 stages
    use the exact factors at t_n, t_n + dt/2 and t_n + dt.  ``budget``
    collects the stage means of the mass source Q1.
    """
    spec = config.spec
    e_half = math.exp(-damping_integral(spec, t, t + 0.5 * dt))
    e_full = math.exp(-damping_integral(spec, t, t + dt))
    # stage values of u are e * U
    k1v, k1u = _tendency_hat(vh, uh, sp, config, budget)
    v2, U2 = vh + 0.5 * dt * k1v, uh + 0.5 * dt * k1u
    k2v, k2u = _tendency_hat(v2, e_half * U2, sp, config, budget)
    k2u = k2u / e_half
    v3, U3 = vh + 0.5 * dt * k2v, uh + 0.5 * dt * k2u
    k3v, k3u = _tendency_hat(v3, e_half * U3, sp, config, budget)
    k3u = k3u / e_half
    v4, U4 = vh + dt * k3v, uh + dt * k3u
    k4v, k4u = _tendency_hat(v4, e_full * U4, sp, config, budget)
    k4u = k4u / e_full
    vn = vh + dt / 6.0 * (k1v + 2 * k2v + 2 * k3v + k4v)
    Un = uh + dt / 6.0 * (k1u + 2 * k2u + 2 * k3u + k4u)
    if config.dealias:
        # the state itself stays inside the 2/3 band, so roundoff outside it cannot grow
        return vn * sp.mask, e_full * Un * sp.mask
    return vn, e_full * Un


def step(state: FieldState, config: SolverConfig, dt: float) -> FieldState:
    if not dt > 0:
        raise ValueError("dt must be positive")
    check_state(state, config)
    limit = config.dx / (1.0 + config.varpi * float(np.max(np.abs(state.v)))
                         + float(np.max(np.hypot(state.u[0], state.u[1]))))
    if dt > limit:
        raise CFLViolation(f"dt={dt:.4g} exceeds the CFL limit {limit:.4g}")
    sp = _spectral(config)
    vh = sp.fft(state.v)
    uh = np.stack([sp.fft(state.u[0]), sp.fft(state.u[1])])
    vn, un = _step_hat(vh, uh, state.t, dt, sp, config)
    out = FieldState(sp.ifft(vn), np.stack([sp.ifft(un[0]), sp.ifft(un[1])]), state.t + dt)
    check_state(out, config)
    return out


def random_initial_state(config: SolverConfig, amplitude=1e-3, seed=0, k_cut=4.0, vortical=True):
    """Random fields with spectrum inside |k| <= k_cut (box units), zero mean, max |(v,u)| = amplitude."""
    rng = np.random.default_rng(seed)
    sp = _spectral(config)
    kk = np.sqrt(sp.k2) * config.box / (2 * np.pi)
    band = (kk > 0) & (kk <= k_cut)

    def field_():
        raw = rng.standard_normal(sp.kx.shape) + 1j * rng.standard_normal(sp.kx.shape)
        return sp.ifft(raw * band)

    v = field_()
    u = np.stack([field_(), field_()])
    if not vortical:
        uh = np.stack([sp.fft(u[0]), sp.fft(u[1])])
        with np.errstate(invalid="ignore", divide="ignore"):
            proj = np.where(sp.k2 > 0, (sp.kx * uh[0] + sp.ky * uh[1]) / sp.k2, 0.0)
        u = np.stack([sp.ifft(sp.kx * proj), sp.ifft(sp.ky * proj)])
    scale = amplitude / max(np.max(np.abs(v)), np.max(np.abs(u)))
    return FieldState(v * scale, u * scale, 0.0)


def fourier_mode_state(config: SolverConfig, amplitude, kx=1, ky=0):
    """v = amplitude cos(k.x), u = 0 with k in box units."""
    n, box = config.grid, config.box
    x = np.arange(n) * box / n
    xx, yy = np.meshgrid(x, x, indexing="ij")
    k = 2 * np.pi / box
    return FieldState(amplitude * np.cos(k * (kx * xx + ky * yy)), np.zeros((2, n, n)), 0.0)


# ------------------------------------------------------------------ diagnostics

def sobolev_norm_sq(sp, fh, box, m):
    return sp.l2sq(fh, box, sp.sobolev_weight(m))


def curl_norm(state: FieldState, config: SolverConfig):
    sp = _spectral(config)
    uxh, uyh = sp.fft(state.u[0]), sp.fft(state.u[1])
    return math.sqrt(sp.l2sq(1j * sp.kx * uyh - 1j * sp.ky * uxh, config.box))


def _functional_terms(state, config):
    """Per-order integrals of |d_t d^a (v,u)|^2 and |grad d^a (v,u)|^2 with |a| = k."""
    sp = _spectral(config)
    box = config.box
    dv, du = rhs_eval(state, config)
    vh = sp.fft(state.v)
    uh = [sp.fft(c) for c in state.u]
    dvh = sp.fft(dv)
    duh = [sp.fft(c) for c in du]
    out = []
    for k in range(config.k_max + 1):
        w = sp.multi_index_weight(k)
        out.append({
            "dt_v": sp.l2sq(dvh, box, w),
            "grad_v": sp.l2sq(vh, box, w * sp.k2),
            "dt_u": sum(sp.l2sq(c, box, w) for c in duh),
            "grad_u": sum(sp.l2sq(c, box, w * sp.k2) for c in uh),
        })
    return out


def weighted_functionals(state: FieldState, config: SolverConfig):
    """Instantaneous values of the time-weighted energies; the run keeps running sups."""
    t = state.t
    lam, d, n = config.spec.lam, config.delta, 2
    sp = _spectral(config)
    nv = math.sqrt(sp.l2sq(sp.fft(state.v), config.box))
    nu = math.sqrt(sum(sp.l2sq(sp.fft(c), config.box) for c in state.u))
    terms = _functional_terms(state, config)
    T = 1.0 + t
    res = {}
    if config.spec.critical:
        L = math.log(math.e + t)
        for k, q in enumerate(terms):
            res[f"Phi_{k + 1}"] = math.sqrt(L ** (d + 1) * (q["dt_v"] + q["grad_v"]) + T ** 2 * L ** d * (q["dt_u"] + q["grad_u"]))
            res[f"Psi_{k + 1}"] = math.sqrt(T * L ** (d + 1) * q["dt_v"] + L ** d / T * q["grad_v"]
                                            + T ** 3 * L ** d * q["dt_u"] + T * L ** d * q["grad_u"])
        res["Psi_0"] = max(L ** (n / 4) * nv, T * L ** (n / 4 + 0.5) * nu)
    else:
        for k, q in enumerate(terms):
            res[f"Phi_{k + 1}"] = math.sqrt(T ** (1 + lam + d) * (q["dt_v"] + q["grad_v"])
                                            + T ** (1 - lam + d) * (q["dt_u"] + q["grad_u"]))
            res[f"Psi_{k + 1}"] = math.sqrt(T ** (1 + d) * q["dt_v"] + T ** (lam + d) * q["grad_v"]
                                            + T ** (1 - 2 * lam + d) * q["dt_u"] + T ** (-lam + d) * q["grad_u"])
        a = (1 + lam) * n / 4
        res["Psi_0"] = max(T ** a * nv, T ** (a + 0.5 * (1 - lam)) * nu)
    res["norm_v"], res["norm_u"] = nv, nu
    return res


def _energy_parts(vh, uh, config):
    """(||(v,u)||^2_{H^m}, ||grad v||^2_{H^(m-1)}, ||u||^2_{H^m}) with m = energy_order."""
    sp = _spectral(config)
    m, box = config.energy_order, config.box
    hv = sobolev_norm_sq(sp, vh, box, m)
    hu = sum(sobolev_norm_sq(sp, c, box, m) for c in uh)
    gv = sum(sobolev_norm_sq(sp, g, box, m - 1) for g in sp.grad(vh))
    return hv + hu, gv, hu


@dataclass
class EnergyReport:
    t: list = field(default_factory=list)
    rows: list = field(default_factory=list)
    energy_ratio: list = field(default_factory=list)
    curl: list = field(default_factory=list)
    mean_defect: float = 0.0
    steps: int = 0
    wall: float = 0.0
    final: FieldState | None = None
    history: list = field(default_factory=list)

    def columns(self):
        return ["t"] + list(self.rows[0].keys()) + ["energy_ratio", "curl"] if self.rows else []

    def to_csv(self, path):
        import csv
        cols = self.columns()
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(cols)
            for t, row, e, c in zip(self.t, self.rows, self.energy_ratio, self.curl):
                w.writerow([repr(t)] + [repr(row[k]) for k in row] + [repr(e), repr(c)])


def run(initial: FieldState, config: SolverConfig, times=None, keep_states=False) -> EnergyReport:
    """Advance to ``config.t_end``, sampling diagnostics on a log-spaced grid.

    Running sups of the weighted energies are reported, so each Phi/Psi
    column is nondecreasing.  ``energy_ratio`` is the high-order energy plus
    its dissipation integral over the initial H^m energy.  ``mean_defect``
    is the largest per-step mismatch between the change of the mean of v
    and the integrated mean of Q1.
    """
    t0 = time.perf_counter()
    if times is None:
        times = np.unique(np.concatenate([[initial.t], np.geomspace(0.1, config.t_end, config.samples)]))
    times = np.asarray(times, float)
    sp = _spectral(config)
    rep = EnergyReport()
    state = initial.copy()
    vh = sp.fft(state.v)
    uh = np.stack([sp.fft(state.u[0]), sp.fft(state.u[1])])
    e0, gv, hu = _energy_parts(vh, uh, config)
    e_cur = e0
    e0 = e0 if e0 > 0 else 1.0
    b_prev = b_of_t(config.spec, state.t)
    diss_prev = gv / b_prev + b_prev * hu
    diss_int = 0.0
    sups: dict = {}

    def record():
        vals = weighted_functionals(state, config)
        for k, v in vals.items():
            if k.startswith(("Phi", "Psi")):
                sups[k] = max(sups.get(k, 0.0), v)
                vals[k] = sups[k]
        rep.t.append(state.t)
        rep.rows.append(vals)
        rep.energy_ratio.append((e_cur + diss_int) / e0)
        rep.curl.append(curl_norm(state, config))
        if keep_states:
            rep.history.append(state.copy())

    ti = 0
    while ti < times.size and times[ti] <= state.t + 1e-12:
        record()
        ti += 1
    cells = config.grid ** 2
    while ti < times.size:
        dt = min(stable_dt(state, config), times[ti] - state.t)
        mean_before = vh[0, 0].real
        stages: list = []
        vh, uh = _step_hat(vh, uh, state.t, dt, sp, config, stages)
        source = dt / 6.0 * (stages[0] + 2 * stages[1] + 2 * stages[2] + stages[3]) if stages else 0.0
        rep.mean_defect = max(rep.mean_defect, abs(vh[0, 0].real - mean_before - source) / cells)
        state = FieldState(sp.ifft(vh), np.stack([sp.ifft(uh[0]), sp.ifft(uh[1])]), state.t + dt)
        check_state(state, config)
        rep.steps += 1
        e_cur, gv, hu = _energy_parts(vh, uh, config)
        b = b_of_t(config.spec, state.t)
        diss = gv / b + b * hu
        diss_int += 0.5 * dt * (diss + diss_prev)
        diss_prev = diss
        if state.t >= times[ti] - 1e-12:
            record()
            ti += 1
    rep.final = state
    rep.wall = time.perf_counter() - t0
    return rep


def linear_companion(config: SolverConfig) -> SolverConfig:
    return replace(config, nonlinear=False)


def state_distance(a: FieldState, b: FieldState, config: SolverConfig):
    sp = _spectral(config)
    d = sp.l2sq(sp.fft(a.v - b.v), config.box)
    d += sum(sp.l2sq(sp.fft(a.u[i] - b.u[i]), config.box) for i in range(2))
    return math.sqrt(d)


def state_norm(a: FieldState, config: SolverConfig):
    z = FieldState(np.zeros_like(a.v), np.zeros_like(a.u), a.t)
    return state_distance(a, z, config)


def manifest(config: SolverConfig, seed, amplitude, wall):
    from . import __version__
    return json.dumps({
        "config": {"mu": config.spec.mu, "lambda": config.spec.lam, "N": config.grid, "L": config.box,
                   "gamma": config.gamma, "cfl": config.cfl, "dealias": config.dealias,
                   "t_end": config.t_end, "delta": config.delta, "k_max": config.k_max,
                   "energy_order": config.energy_order},
        "seed": seed, "amplitude": amplitude, "version": __version__,
        "numpy": np.__version__, "wall_time": wall,
    }, indent=2, sort_keys=True)
