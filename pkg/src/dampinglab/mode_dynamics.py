"""Per-frequency dynamics of the linearized damped system.

Three 2x2 mode systems share one integrator:

* ``coupled``: v' = -|xi| u,  u' = |xi| v - b(t) u   (radial Fourier modes)
* ``wave_v``:  y'' + |xi|^2 y + b y' = 0              (state (y, y'))
* ``wave_u``:  y'' + |xi|^2 y + (b y)' = 0            (state (y, y'))

All of them have the shape A(t) = [[0, alpha], [beta(t), -b(t)]], which the
Magnus step below exploits so that no cancellation enters the commutator.
Integration runs in tau = ln(1+t) with a step-doubled fourth-order Magnus
scheme and a closed-form 2x2 exponential that stays accurate when b*dt is
astronomically large.
"""
from __future__ import annotations

from dataclasses import dataclass
import math
from typing import NamedTuple
import warnings

import numpy as np
from numpy.polynomial import legendre as npleg
from scipy.optimize import brentq

from .damping_core import (
    DampingSpec,
    b_derivative,
    b_of_t,
    damping_integral,
)

SYSTEMS = ("coupled", "wave_v", "wave_u")
ZONES = ("Hyp", "Pd", "Red", "Ell", "BoundedRemainder")


class StepSizeUnderflow(RuntimeError):
    pass


@dataclass
class ModeState:
    """State of one mode: (v, u) for ``coupled`` or (y, dy/dt) for the wave systems."""

    xi_mag: float
    a: complex
    b_comp: complex
    t: float
    steps: int = 0
    rejected: int = 0
    max_local_error: float = 0.0

    def __post_init__(self):
        if self.xi_mag < 0:
            raise ValueError("xi_mag must be nonnegative")
        if not (np.isfinite(self.a) and np.isfinite(self.b_comp)):
            raise ValueError("mode state must be finite")

    def vector(self):
        return np.array([self.a, self.b_comp])


@dataclass(frozen=True)
class ZonePartition:
    eps: float = 0.125
    big_n: float = 2.0
    t_ell: float = 0.0
    c0: float = 0.25

    def __post_init__(self):
        if not (0 < self.eps < self.big_n):
            raise ValueError("need 0 < eps < big_n")
        if self.t_ell < 0:
            raise ValueError("t_ell must be nonnegative")
        if self.c0 <= 0:
            raise ValueError("c0 must be positive")

    @classmethod
    def default(cls, spec: DampingSpec, eps=0.125, big_n=2.0, c0=None):
        """Defaults eps=1/8, N=2, c0=mu/4 and the elliptic start time from `default_t_ell`."""
        c0 = spec.mu / 4 if c0 is None else c0
        if not 0 < c0 < spec.mu / 2:
            raise ValueError("c0 must lie in (0, mu/2)")
        return cls(eps=eps, big_n=big_n, t_ell=default_t_ell(spec), c0=c0)


def default_t_ell(spec: DampingSpec, ratio: float = 0.25) -> float:
    """First time with b'(t) <= ratio * b(t)^2, i.e. b' is dominated by b^2.

    Closed form: (1+t)^(1-lam) >= -lam / (ratio mu).
    """
    need = -spec.lam / (ratio * spec.mu)
    if need <= 1.0:
        return 0.0
    return need ** (1.0 / (1.0 - spec.lam)) - 1.0


# ---------------------------------------------------------------- symbols

def _system_sign(system):
    if system in ("v", "wave_v"):
        return -1.0
    if system in ("u", "wave_u"):
        return 1.0
    raise ValueError(f"unknown symbol system {system!r}")


def m_symbol(system, spec: DampingSpec, t, xi_mag):
    """m_v = |xi|^2 - b^2/4 - b'/2 and m_u = |xi|^2 - b^2/4 + b'/2."""
    sg = _system_sign(system)
    b = b_of_t(spec, t)
    out = np.asarray(xi_mag, float) ** 2 - 0.25 * np.asarray(b) ** 2 + sg * 0.5 * np.asarray(b_derivative(spec, t, 1))
    return out if out.ndim else float(out)


def m_symbol_dt(system, spec: DampingSpec, t, order: int = 1):
    """Time derivatives of m (independent of xi)."""
    sg = _system_sign(system)
    b0 = b_of_t(spec, t)
    b1 = b_derivative(spec, t, 1)
    b2 = b_derivative(spec, t, 2)
    if order == 1:
        return -0.5 * b0 * b1 + sg * 0.5 * b2
    if order == 2:
        b3 = b_derivative(spec, t, 3)
        return -0.5 * (b1 * b1 + b0 * b2) + sg * 0.5 * b3
    raise ValueError("order must be 1 or 2")


def sqrt_abs_m(system, spec, t, xi_mag):
    """sqrt|m| together with its exact first and second time derivatives."""
    m = m_symbol(system, spec, t, xi_mag)
    sg = np.sign(m)
    x = np.sqrt(np.abs(m))
    d1 = sg * m_symbol_dt(system, spec, t, 1)
    d2 = sg * m_symbol_dt(system, spec, t, 2)
    x1 = d1 / (2 * x)
    x2 = d2 / (2 * x) - x1 * x1 / x
    return x, x1, x2


def classify_zone(system, spec: DampingSpec, partition: ZonePartition, t, xi_mag) -> str:
    m = m_symbol(system, spec, t, xi_mag)
    r = math.sqrt(abs(m))
    b = b_of_t(spec, t)
    if m >= 0 and r >= partition.big_n * b:
        return "Hyp"
    if m >= 0 and partition.eps * b <= r <= partition.big_n * b:
        return "Pd"
    if r <= partition.eps * b:
        return "Red"
    if m <= 0 and t >= partition.t_ell:
        return "Ell"
    return "BoundedRemainder"


def hyperbolic_exit_time(system, spec: DampingSpec, partition: ZonePartition, xi_mag, rtol=1e-10):
    """sup{t : (t, xi) hyperbolic}, or None if the mode is never hyperbolic."""
    if xi_mag <= 0:
        raise ValueError("xi_mag must be positive")
    nn = partition.big_n

    def f(tau):
        t = math.expm1(tau)
        return m_symbol(system, spec, t, xi_mag) - nn * nn * b_of_t(spec, t) ** 2

    # beyond this time (N^2 + 1/4) b^2 exceeds xi^2 + |b'|/2 for good
    top = (xi_mag / (spec.mu * math.sqrt(nn * nn + 0.25))) ** (-1.0 / spec.lam)
    tau_hi = math.log(max(top, 1.0)) + 2.0
    taus = np.linspace(0.0, tau_hi, 2049)
    vals = np.array([f(x) for x in taus])
    pos = np.nonzero(vals >= 0)[0]
    if pos.size == 0:
        return None
    k = pos[-1]
    if k == taus.size - 1:
        raise RuntimeError("hyperbolic zone extends past the scan window")
    tau_star = brentq(f, taus[k], taus[k + 1], xtol=rtol * 1e-2, rtol=4 * np.finfo(float).eps)
    return math.expm1(tau_star)


# ---------------------------------------------------------- 2x2 exponential

def expm2(om):
    """exp of real 2x2 matrices, shape (..., 2, 2), without cancellation.

    The stiff case (one eigenvalue hugely negative, one moderate) is handled by
    computing the small eigenvalue as det / (large eigenvalue) and rewriting
    the diagonal entries so that no difference of nearly equal terms appears.
    """
    om = np.asarray(om, dtype=float)
    a = om[..., 0, 0]
    b = om[..., 0, 1]
    c = om[..., 1, 0]
    d = om[..., 1, 1]
    m = 0.5 * (a + d)
    p = 0.5 * (a - d)
    bc = b * c
    q = p * p + bc
    det = a * d - bc
    out = np.empty(om.shape)
    e11 = np.empty(m.shape)
    e12 = np.empty(m.shape)
    e21 = np.empty(m.shape)
    e22 = np.empty(m.shape)

    small = np.abs(q) <= 1e-6
    real = (q > 0) & ~small
    cplx = (q < 0) & ~small

    if np.any(small):
        # sinh(d)/d and cosh(d) as series in q = d^2
        qs = q[small]
        em = np.exp(m[small])
        ch = 1 + qs / 2 + qs * qs / 24 + qs ** 3 / 720
        sh = 1 + qs / 6 + qs * qs / 120 + qs ** 3 / 5040
        ps = p[small]
        e11[small] = em * (ch + sh * ps)
        e22[small] = em * (ch - sh * ps)
        e12[small] = em * sh * b[small]
        e21[small] = em * sh * c[small]

    if np.any(cplx):
        w = np.sqrt(-q[cplx])
        em = np.exp(m[cplx])
        cs = np.cos(w)
        sn = np.sin(w) / w
        pc = p[cplx]
        e11[cplx] = em * (cs + sn * pc)
        e22[cplx] = em * (cs - sn * pc)
        e12[cplx] = em * sn * b[cplx]
        e21[cplx] = em * sn * c[cplx]

    if np.any(real):
        dl = np.sqrt(q[real])
        mr = m[real]
        pr = p[real]
        detr = det[real]
        bcr = bc[real]
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            lp = np.where(mr < 0, detr / (mr - dl), mr + dl)
            lm = np.where(mr > 0, detr / (mr + dl), mr - dl)
            ep = np.exp(lp)
            en = np.exp(lm)
            # (ep - en) / (2 dl) without cancellation
            s = ep * (-np.expm1(-2 * dl)) / (2 * dl)
            ch = 0.5 * (ep + en)
            big = dl > 0.5
            # delta + p and delta - p, each computed from the stable side
            dpp = np.where(pr >= 0, dl + pr, bcr / (dl - pr))
            dmp = np.where(pr <= 0, dl - pr, bcr / (dl + pr))
            r11 = np.where(big, (ep * dpp + en * dmp) / (2 * dl), ch + s * pr)
            r22 = np.where(big, (ep * dmp + en * dpp) / (2 * dl), ch - s * pr)
        e11[real] = r11
        e22[real] = r22
        e12[real] = s * b[real]
        e21[real] = s * c[real]

    out[..., 0, 0] = e11
    out[..., 0, 1] = e12
    out[..., 1, 0] = e21
    out[..., 1, 1] = e22
    return out


# ------------------------------------------------------------- mode matrix

_C1 = 0.5 - math.sqrt(3) / 6
_C2 = 0.5 + math.sqrt(3) / 6
_KAPPA = math.sqrt(3) / 12
_SWEEPS = 8


def _raw_coefficients(system, spec, t, xi):
    """alpha, beta, gamma of the mode matrix [[0, alpha], [beta, -gamma]]."""
    b = b_of_t(spec, t)
    one = np.ones_like(xi)
    if system == "coupled":
        return -xi, xi * one, b * one
    if system == "wave_v":
        return one, -(xi * xi) * one, b * one
    if system == "wave_u":
        return one, -(xi * xi + b_derivative(spec, t, 1)), b * one
    raise ValueError(f"unknown system {system!r}; expected one of {SYSTEMS}")


def mode_matrix(system, spec: DampingSpec, t, xi_mag):
    """A(t, xi) as an array (..., 2, 2)."""
    xi = np.asarray(xi_mag, float)
    t = np.asarray(t, float)
    al, be, ga = _raw_coefficients(system, spec, t, xi)
    shape = np.broadcast(al, be, ga).shape
    out = np.zeros(shape + (2, 2))
    out[..., 0, 1] = al
    out[..., 1, 0] = be
    out[..., 1, 1] = -ga
    return out


# ------------------------------------------------------- truncated Taylor series
# Arrays of normalized coefficients f^(j)(t)/j! along axis 0.

def _series_mul(f, g):
    k = min(len(f), len(g))
    out = np.zeros((k,) + np.broadcast_shapes(f.shape[1:], g.shape[1:]), np.result_type(f, g))
    for i in range(k):
        out[i:] += f[i] * g[:k - i]
    return out


def _series_div(f, g):
    k = min(len(f), len(g))
    q = np.zeros((k,) + np.broadcast_shapes(f.shape[1:], g.shape[1:]), np.result_type(f, g))
    for j in range(k):
        acc = f[j] - (q[:j] * g[j:0:-1]).sum(axis=0) if j else f[0]
        q[j] = acc / g[0]
    return q


def _series_sqrt(f, ref=None):
    """Square root series; the leading branch is the one closest to ``ref``."""
    q = np.zeros_like(f)
    q[0] = np.sqrt(f[0])
    if ref is not None:
        q[0] = np.where((q[0] * np.conj(ref)).real < 0, -q[0], q[0])
    for j in range(1, len(f)):
        acc = f[j] - (q[1:j] * q[j - 1:0:-1]).sum(axis=0)
        q[j] = acc / (2 * q[0])
    return q


def _series_dt(f):
    j = np.arange(1, len(f)).reshape((-1,) + (1,) * (f.ndim - 1))
    return j * f[1:]


def _b_series(spec, t, order):
    """b^(j)(t)/j! for j <= order."""
    out, coef = [], spec.mu
    for j in range(order + 1):
        out.append(coef * (1.0 + t) ** (-spec.lam - j))
        coef *= (-spec.lam - j) / (j + 1)
    return np.array(out)


class Manifolds(NamedTuple):
    """Adiabatic eigen-directions (1, sigma) and (rho, 1) of a mode and their rates."""
    sigma: np.ndarray
    rho: np.ndarray
    rate_1: np.ndarray
    rate_2: np.ndarray
    leak: np.ndarray


def adiabatic_manifolds(system, spec: DampingSpec, t, xi_mag, sweeps=_SWEEPS) -> Manifolds:
    """Invariant directions of x' = A(t) x expanded to ``sweeps`` orders.

    x2 = sigma x1 is invariant when sigma' = beta - gamma sigma - alpha sigma^2
    and x1 = rho x2 when rho' = alpha + gamma rho - beta rho^2.  Each sweep
    takes the root of the frozen quadratic with the previous derivative on the
    right-hand side; the arithmetic runs on truncated Taylor series in t.  In
    the oscillatory regime both directions are complex.  ``leak`` is the size
    of the coupling that the truncation leaves between the two directions, per
    unit of tau = ln(1+t).
    """
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        return _manifolds(system, spec, t, np.atleast_1d(np.asarray(xi_mag, float)), sweeps)


def _manifolds(system, spec, t, xi, sweeps):
    k0 = sweeps + 2
    bs = _b_series(spec, t, k0)
    gam = bs[:k0, None].astype(complex)
    gam2 = _series_mul(gam, gam)
    al = _raw_coefficients(system, spec, t, xi)[0] * np.ones_like(xi)
    bet = np.zeros((k0, xi.size), complex)
    if system == "wave_u":
        bet[:] = -_series_dt(bs)[:k0, None]
    bet[0] += _raw_coefficients(system, spec, t, xi)[1] if system != "wave_u" else -xi * xi
    lead = np.zeros((k0, xi.size), complex)
    lead[0] = al
    ref = np.sqrt(gam2[0] + 4 * al * bet[0])
    best = None
    sig = rho = None
    for sweep in range(sweeps + 1):
        if sig is None:
            rs, rr = bet, lead
        else:
            k = len(sig) - 1
            ds, dr = sig[1], rho[1]
            rs = bet[:k] - _series_dt(sig)
            rr = lead[:k] - _series_dt(rho)
        k = len(rs)
        root = _series_sqrt(gam2[:k] + 4 * al * rs, ref)
        sig = _series_div(2 * rs, gam[:k] + root)
        root = _series_sqrt(gam2[:k] + 4 * _series_mul(bet[:k], rr), ref)
        rho = _series_div(-2 * rr, gam[:k] + root)
        if sweep == 0:
            continue
        # the expansion is asymptotic: keep, per mode, the sweep with the least leak
        s0, r0 = sig[0], rho[0]
        det = 1 - r0 * s0
        with np.errstate(divide="ignore", invalid="ignore"):
            leak = (1 + t) * np.maximum(np.abs(ds - sig[1]) * np.maximum(1, np.abs(r0)),
                                        np.abs(dr - rho[1]) * np.maximum(1, np.abs(s0))) / np.abs(det)
            cond = (1 + np.abs(s0)) * (1 + np.abs(r0)) / np.abs(det)
        leak = np.where(np.isfinite(leak) & (cond < 1e4), leak, np.inf)
        if best is None:
            best = [s0, r0, leak]
        else:
            better = leak < best[2]
            best = [np.where(better, s0, best[0]), np.where(better, r0, best[1]),
                    np.where(better, leak, best[2])]
    s0, r0, leak = best
    rate_1 = al * s0
    rate_2 = bet[0] * r0 - gam[0, 0]
    return Manifolds(s0, r0, rate_1, rate_2, leak)


def _frame(man):
    """T = [[1, rho], [sigma, 1]] and its inverse."""
    n = man.sigma.size
    tm = np.empty((n, 2, 2), complex)
    tm[:, 0, 0] = 1
    tm[:, 0, 1] = man.rho
    tm[:, 1, 0] = man.sigma
    tm[:, 1, 1] = 1
    det = 1 - man.rho * man.sigma
    ti = np.empty_like(tm)
    # modes without a converged expansion give nan here and are never selected
    with np.errstate(divide="ignore", invalid="ignore"):
        ti[:, 0, 0] = 1 / det
        ti[:, 0, 1] = -man.rho / det
        ti[:, 1, 0] = -man.sigma / det
        ti[:, 1, 1] = 1 / det
    return tm, ti


def _magnus_exp(system, spec, xi, tau0, h):
    """exp of the fourth-order Magnus exponent over [tau0, tau0 + h] in tau = ln(1+t).

    The commutator is written out by hand so terms that vanish identically
    carry no rounding noise.
    """
    ta = tau0 + _C1 * h
    tb = tau0 + _C2 * h
    e1, e2 = math.exp(ta), math.exp(tb)
    al, c1, g1 = _raw_coefficients(system, spec, math.expm1(ta), xi)
    _, c2, g2 = _raw_coefficients(system, spec, math.expm1(tb), xi)
    k = _KAPPA * h * h * e1 * e2
    hh = 0.5 * h
    om = np.empty(np.shape(xi) + (2, 2))
    dc = al * (c1 - c2)
    om[..., 0, 0] = k * dc
    om[..., 0, 1] = hh * al * (e1 + e2) + k * al * (g2 - g1)
    om[..., 1, 0] = hh * (e1 * c1 + e2 * c2) + k * (g1 * (c2 - c1) - c1 * (g2 - g1))
    om[..., 1, 1] = -hh * (e1 * g1 + e2 * g2) - k * dc
    return expm2(om)


def _mul(e, g):
    """Batched 2x2 product e @ g."""
    out = np.empty(np.broadcast_shapes(e.shape, g.shape), np.result_type(e, g))
    out[..., 0, 0] = e[..., 0, 0] * g[..., 0, 0] + e[..., 0, 1] * g[..., 1, 0]
    out[..., 0, 1] = e[..., 0, 0] * g[..., 0, 1] + e[..., 0, 1] * g[..., 1, 1]
    out[..., 1, 0] = e[..., 1, 0] * g[..., 0, 0] + e[..., 1, 1] * g[..., 1, 0]
    out[..., 1, 1] = e[..., 1, 0] * g[..., 0, 1] + e[..., 1, 1] * g[..., 1, 1]
    return out


@dataclass
class PropagationInfo:
    steps: int = 0
    rejected: int = 0
    max_local_error: float = 0.0
    det_defect: float = 0.0
    det_points: int = 0
    det_skipped: int = 0
    switches: int = 0


_FLOOR = 1e-250


def _step_error(g_big, g_fine):
    """Max step-doubling difference relative to the size of each column."""
    diff = np.abs(g_big - g_fine).max(axis=-2)
    scale = np.abs(g_fine).max(axis=-2)
    err = np.where(scale > _FLOOR, diff / np.maximum(scale, _FLOOR), 0.0)
    return float(err.max()) if err.size else 0.0


def _rates(system, spec, xi, tau):
    """Rates of the two adiabatic directions per unit tau, and the leak."""
    man = adiabatic_manifolds(system, spec, math.expm1(tau), xi)
    e = math.exp(tau)
    return e * np.stack([man.rate_1, man.rate_2], axis=-1), man.leak


def _exponent_error(err_i, tm, w):
    """Error of the rate integrals, weighted by the share of each direction in G."""
    if not w.size:
        return 0.0
    part = np.abs(tm).max(axis=-2)[..., :, None] * np.abs(w)
    share = part / np.maximum(part.sum(axis=-2, keepdims=True), _FLOOR)
    with np.errstate(invalid="ignore"):
        err = (err_i[..., :, None] * share).max()
    return float(err) if np.isfinite(err) else np.inf


def _advance_adiabatic(system, spec, xi, w, tm, tau, tau_end, h, tol, leave, info):
    """Integrate the adiabatic rates from tau towards tau_end.

    Each step uses Boole's rule on five equally spaced nodes and takes the
    difference to the two-panel Simpson rule as its error.  The advance stops
    early, before any step that would carry a mode past a point where its leak
    exceeds ``leave``.  Returns (w, tau reached, next step size).
    """
    f0, _ = _rates(system, spec, xi, tau)
    while tau < tau_end:
        hh = min(h, tau_end - tau)
        land = hh == tau_end - tau
        nodes = [_rates(system, spec, xi, tau + q * hh) for q in (0.25, 0.5, 0.75, 1.0)]
        f1, f2, f3, f4 = (n[0] for n in nodes)
        if any(np.any(n[1] > leave) for n in nodes):
            if hh > 1e-3:
                h = 0.25 * hh
                continue
            break
        boole = hh / 90 * (7 * f0 + 32 * f1 + 12 * f2 + 32 * f3 + 7 * f4)
        simpson = hh / 12 * (f0 + 4 * f1 + 2 * f2 + 4 * f3 + f4)
        err = _exponent_error(np.abs(boole - simpson), tm, w)
        if err > tol:
            info.rejected += 1
            h = hh * max(0.1, 0.9 * (tol / err) ** 0.2)
            continue
        with np.errstate(under="ignore"):
            w = np.exp(boole)[..., :, None] * w
        tau = tau_end if land else tau + hh
        f0 = f4
        info.steps += 1
        info.max_local_error = max(info.max_local_error, err)
        fac = 4.0 if err == 0 else min(4.0, max(0.2, 0.9 * (tol / err) ** 0.2))
        if not land or fac < 1:
            h = hh * fac
    return w, tau, h


def _advance_numeric(system, spec, xi, g, tau, tau_end, h, tol, info):
    """Step G with Magnus exponentials and step doubling from tau to tau_end."""
    while tau < tau_end:
        hh = min(h, tau_end - tau)
        land = hh == tau_end - tau
        e_big = _magnus_exp(system, spec, xi, tau, hh)
        e_fine = _mul(_magnus_exp(system, spec, xi, tau + 0.5 * hh, 0.5 * hh),
                      _magnus_exp(system, spec, xi, tau, 0.5 * hh))
        g_big = _mul(e_big, g)
        g_fine = _mul(e_fine, g)
        with np.errstate(invalid="ignore", over="ignore"):
            err = _step_error(g_big, g_fine)
        if not np.isfinite(err):
            err = np.inf
        if err > tol:
            info.rejected += 1
            h = hh * max(0.1, 0.9 * (tol / err) ** 0.2) if np.isfinite(err) else 0.25 * hh
            if h < 1e-14:
                raise StepSizeUnderflow(
                    f"step size underflow at t={math.expm1(tau):.6g} (largest xi={xi.max():.6g})")
            continue
        g = g_fine
        tau = tau_end if land else tau + hh
        info.steps += 1
        info.max_local_error = max(info.max_local_error, err)
        fac = 4.0 if err == 0 else min(4.0, max(0.2, 0.9 * (tol / err) ** 0.2))
        if not land or fac < 1:
            h = hh * fac
    return g, h


def propagate(system, spec: DampingSpec, xi_mag, s, t_out, tol=1e-10, h0=None, h_max=0.5,
              check_det=True, info: PropagationInfo | None = None, extinct=1e-280,
              weights=None, rel_extinct=1e-30, sync=0.1):
    """Fundamental matrices G(t, s, xi) for every t in ``t_out`` and every xi.

    Returns an array with shape (len(t_out),) + shape(xi) + (2, 2).  Time is
    advanced in tau = ln(1+t) with step-doubling control at local tolerance
    ``tol``.

    A mode is carried in one of two ways.  Near turning points, and wherever
    the adiabatic expansion does not converge, G itself is stepped with
    fourth-order Magnus exponentials.  Elsewhere G = T(t) W with T the frame
    of adiabatic directions; W is diagonal in that frame, so a step only
    integrates two smooth rates and neither oscillation nor stiffness limits
    the step.  The two groups have their own step sequences and meet at sync
    points at most ``sync`` apart in tau, where modes switch representation,
    outputs are written and the determinant is checked.  A mode is dropped
    once all entries fall below ``extinct``; with ``weights`` it is also
    dropped once weight * |G| is below ``rel_extinct`` times the largest such
    value over the modes.
    """
    if system not in SYSTEMS:
        raise ValueError(f"unknown system {system!r}; expected one of {SYSTEMS}")
    xi_in = np.asarray(xi_mag, float)
    if np.any(xi_in < 0):
        raise ValueError("xi_mag must be nonnegative")
    t_out = np.atleast_1d(np.asarray(t_out, float))
    if np.any(t_out < s) or s < 0:
        raise ValueError("require 0 <= s <= t")
    if np.any(np.diff(t_out) < 0):
        raise ValueError("t_out must be nondecreasing")
    info = PropagationInfo() if info is None else info
    track_det = check_det and system == "coupled"
    enter_at, leave_at = tol, 10 * tol
    xi = xi_in.reshape(-1)
    wts = None if weights is None else np.broadcast_to(np.asarray(weights, float), xi_in.shape).reshape(-1)
    out = np.zeros((t_out.size, xi.size, 2, 2))
    idx = np.arange(xi.size)
    g = np.tile(np.eye(2), (xi.size, 1, 1))
    w = np.zeros((xi.size, 2, 2), complex)
    ad = np.zeros(xi.size, dtype=bool)
    tau = math.log1p(s)
    targets = np.log1p(t_out)
    h_num = h0 if h0 is not None else 1e-3
    h_ad = h_num
    k = 0

    def regroup(t_now):
        # switch modes between the two representations at the current time
        nonlocal g, w, ad
        man = adiabatic_manifolds(system, spec, t_now, xi)
        tm, ti = _frame(man)
        enter = ~ad & (man.leak <= enter_at)
        leave = ad & ~(man.leak <= leave_at)
        if np.any(enter):
            w[enter] = _mul(ti[enter], g[enter])
        if np.any(leave):
            g[leave] = _mul(tm[leave], w[leave]).real
        ad = (ad | enter) & ~leave
        info.switches += int(enter.sum() + leave.sum())
        if np.any(ad):
            g[ad] = _mul(tm[ad], w[ad]).real
        return tm

    tm = regroup(math.expm1(tau))
    while k < t_out.size and targets[k] <= tau:
        out[k, idx] = g
        k += 1
    while k < t_out.size and idx.size:
        tau_end = min(targets[k], tau + sync)
        if np.any(ad):
            w_ad, reached, h_ad = _advance_adiabatic(system, spec, xi[ad], w[ad], tm[ad], tau,
                                                     tau_end, min(h_ad, h_max), tol, leave_at, info)
            w[ad] = w_ad
            if reached <= tau:
                # a mode is about to lose adiabaticity: take it out before moving on
                man = adiabatic_manifolds(system, spec, math.expm1(tau), xi)
                tm_all, _ = _frame(man)
                sub = np.flatnonzero(ad)
                nodes = [adiabatic_manifolds(system, spec, math.expm1(tau + q * h_ad), xi[ad]).leak
                         for q in (0.25, 0.5, 0.75, 1.0)]
                bad = sub[np.max(nodes, axis=0) > leave_at]
                g[bad] = _mul(tm_all[bad], w[bad]).real
                ad[bad] = False
                info.switches += bad.size
                continue
            tau_end = reached
        if np.any(~ad):
            g[~ad], h_num = _advance_numeric(system, spec, xi[~ad], g[~ad], tau, tau_end,
                                             min(h_num, h_max), tol, info)
        tau = tau_end
        t_now = math.expm1(tau)
        tm = regroup(t_now)
        if track_det:
            _det_check(g, spec, s, t_now, info)
        while k < t_out.size and targets[k] <= tau:
            out[k, idx] = g
            k += 1
        size = np.abs(g).reshape(g.shape[0], -1).max(axis=1)
        alive = size >= extinct
        if wts is not None:
            ws = wts[idx] * size
            alive &= ws >= rel_extinct * ws.max()
        if not alive.all():
            idx, xi, g, w, ad, tm = idx[alive], xi[alive], g[alive], w[alive], ad[alive], tm[alive]
    return out.reshape((t_out.size,) + xi_in.shape + (2, 2))


def _det_check(g, spec, s, t, info):
    """Compare det G with exp(-int b) wherever the determinant is numerically resolvable.

    Columns are scaled to unit max-norm first and the comparison is done in
    logarithms, so neither det G nor exp(-int b) has to be representable.
    A point counts when the scaled 2x2 determinant is free of cancellation to
    1e-8; points where it is not are counted as skipped.
    """
    d = np.abs(g).max(axis=-2)
    live = (d[..., 0] > 0) & (d[..., 1] > 0)
    with np.errstate(invalid="ignore", divide="ignore"):
        gs = g / np.where(d > 0, d, 1.0)[..., None, :]
        p1 = gs[..., 0, 0] * gs[..., 1, 1]
        p2 = gs[..., 0, 1] * gs[..., 1, 0]
        det = p1 - p2
        ok = live & (np.finfo(float).eps * (np.abs(p1) + np.abs(p2)) <= 1e-8 * np.abs(det))
        info.det_points += int(ok.sum())
        info.det_skipped += int((~ok).sum())
        if np.any(ok):
            logdet = np.log(np.abs(det[ok])) + np.log(d[..., 0][ok]) + np.log(d[..., 1][ok])
            dev = np.abs(np.sign(det[ok]) * np.exp(logdet + damping_integral(spec, s, t)) - 1.0)
            info.det_defect = max(info.det_defect, float(np.max(dev)))


def fundamental_matrix(system, spec, xi_mag, s, t, **kw):
    """G(t, s, xi) for a single time t."""
    return propagate(system, spec, xi_mag, s, [t], **kw)[0]


def integrate_mode(system, spec: DampingSpec, xi_mag, s, t, init: ModeState, tol=1e-10) -> ModeState:
    """Advance one mode state from s to t."""
    if t < s:
        raise ValueError("require s <= t")
    info = PropagationInfo()
    g = propagate(system, spec, float(xi_mag), s, [t], tol=tol, info=info)[0]
    y = g @ np.array([init.a, init.b_comp])
    return ModeState(xi_mag=float(xi_mag), a=y[0], b_comp=y[1], t=float(t), steps=info.steps,
                     rejected=info.rejected, max_local_error=info.max_local_error)


@dataclass(frozen=True)
class MultiplierSample:
    phi1: complex
    phi2: complex
    system: str
    s: float
    t: float
    xi_mag: float
    dphi1: complex = 0.0
    dphi2: complex = 0.0


def compute_multipliers(system, spec, xi_mag, s, t) -> MultiplierSample:
    """Value-to-value (phi1) and velocity-to-value (phi2) multipliers of a wave mode."""
    if system not in ("wave_v", "wave_u"):
        raise ValueError("multipliers are defined for wave_v and wave_u")
    g = fundamental_matrix(system, spec, float(xi_mag), s, t)
    return MultiplierSample(phi1=g[0, 0], phi2=g[0, 1], system=system, s=float(s), t=float(t),
                            xi_mag=float(xi_mag), dphi1=g[1, 0], dphi2=g[1, 1])


# ------------------------------------------------------------ Peano-Baker

def _integration_matrix(k):
    """Gauss-Legendre nodes/weights on [-1, 1] and the matrix of running integrals from -1."""
    x, w = npleg.leggauss(k)
    van = npleg.legvander(x, k - 1)
    ints = np.empty((k, k))
    for j in range(k):
        cj = np.zeros(k)
        cj[j] = 1.0
        ints[:, j] = npleg.legval(x, npleg.legint(cj, lbnd=-1))
    return x, w, ints @ np.linalg.inv(van)


def peano_baker_green(spec: DampingSpec, xi_mag, s, t, terms=30, nodes=24, system="coupled"):
    """Truncated Peano-Baker series for G(t, s, xi); returns (matrix, last term magnitude).

    Iterated integrals are evaluated by spectral integration on Gauss-Legendre
    nodes: P_k(x) = int_s^x A(y) P_{k-1}(y) dy.
    """
    if terms < 1:
        raise ValueError("terms must be >= 1")
    if t < s:
        raise ValueError("require s <= t")
    eye = np.eye(2)
    if t == s:
        return eye.astype(complex), 0.0
    x, w, q = _integration_matrix(nodes)
    half = 0.5 * (t - s)
    tn = s + half * (x + 1)
    amat = mode_matrix(system, spec, tn, float(xi_mag))
    p = np.broadcast_to(eye, (nodes, 2, 2)).copy()
    total = eye.copy()
    last = 0.0
    for _ in range(terms):
        f = np.einsum("kij,kjl->kil", amat, p)
        term = half * np.einsum("k,kij->ij", w, f)
        p = half * np.einsum("mk,kij->mij", q, f)
        total = total + term
        last = float(np.abs(term).max())
    if last > 1e-12:
        warnings.warn(f"Peano-Baker truncation not converged: last term {last:.3g}", stacklevel=2)
    return total.astype(complex), last


# ------------------------------------------------- elliptic-zone residuals

def _elliptic_check(system, spec, t, xi_mag, partition):
    partition = ZonePartition.default(spec) if partition is None else partition
    sysname = "v" if system in ("v", "wave_v") else "u"
    if classify_zone(sysname, spec, partition, t, xi_mag) != "Ell":
        raise ValueError(f"(t={t}, xi={xi_mag}) is outside the elliptic zone of {sysname}")
    return sysname


def _residual_full(sysname, spec, t, xi):
    b0 = b_of_t(spec, t)
    b1 = b_derivative(spec, t, 1)
    b2 = b_derivative(spec, t, 2)
    x2 = -m_symbol(sysname, spec, t, xi)
    x = math.sqrt(x2)
    den = (x + 0.5 * b0) ** 2 * b0
    if sysname == "v":
        return 0.5 * b1 * (xi * xi - 0.5 * b1) / den + (0.5 * b0 * b2 - b1 * b1 + 2 * b1 * xi * xi) / (4 * x2 * b0)
    return -0.5 * b1 * (0.5 * b1 + xi * xi) / den + (-0.5 * b0 * b2 + b1 * b1 + 2 * b1 * xi * xi) / (4 * x2 * b0)


def elliptic_residual_naive(system, spec, t, xi_mag):
    """Direct transcription of the residual; loses digits for large b, used as a cross-check."""
    sysname = "v" if system in ("v", "wave_v") else "u"
    x, x1, _ = sqrt_abs_m(sysname, spec, t, xi_mag)
    b0 = b_of_t(spec, t)
    lhs = x + x1 / (2 * x) - 0.5 * b0
    rhs = -xi_mag ** 2 / (x + 0.5 * b0) + (b_derivative(spec, t, 1) / b0 if sysname == "v" else 0.0)
    return lhs - rhs


def elliptic_residual(system, spec: DampingSpec, t, xi_mag, partition=None, part="full"):
    """|r(t, xi)| of the elliptic-zone frequency expansion.

    ``part="full"`` is the whole difference between the left-hand side and the
    leading terms.  ``part="remainder"`` removes the piece proportional to
    |xi|^2 / b (the part absorbed into the leading term), leaving the
    xi-independent remainder built from b'^2/b^3 and b''/b^2.
    """
    sysname = _elliptic_check(system, spec, t, xi_mag, partition)
    full = _residual_full(sysname, spec, t, float(xi_mag))
    if part == "full":
        return abs(full)
    if part == "remainder":
        return abs(_residual_full(sysname, spec, t, 0.0))
    if part == "xi_part":
        return abs(full - _residual_full(sysname, spec, t, 0.0))
    raise ValueError("part must be 'full', 'remainder' or 'xi_part'")


class DiagonalizationResidual(NamedTuple):
    identity_defect: float
    r1_norm: float


_MM = np.array([[1j, -1j], [1, 1]])
_MINV = 0.5 * np.array([[-1j, 1], [1j, 1]])
_JJ = np.array([[0, 1], [-1, 0]], dtype=complex)


def diagonalization_matrices(spec, t, xi_mag, n1_scale=0.5):
    """A, D, R, N1, F0 and D_t N1 of the first diagonalization step (D_t = -i d/dt).

    ``n1_scale`` multiplies D_t sqrt|m| / |m| in N1.  The displayed coefficient
    is 1/2; 1/4 is the value that makes the conjugation identity exact.
    """
    x, x1, x2 = sqrt_abs_m("v", spec, t, xi_mag)
    dts = -1j * x1
    amat = np.array([[dts / x, x], [-x, 0]], dtype=complex)
    dmat = np.diag([-1j * x, 1j * x])
    cr = dts / (2 * x)
    rmat = cr * np.array([[1, -1], [-1, 1]], dtype=complex)
    # N1 = n(t) J with n = i n1_scale D_t x / x^2 = n1_scale x' / x^2 (real)
    nn = n1_scale * x1 / (x * x)
    dn = n1_scale * (x2 / (x * x) - 2 * x1 * x1 / x ** 3)
    n1 = nn * _JJ
    dtn1 = -1j * dn * _JJ
    f0 = cr * np.eye(2)
    return dict(A=amat, D=dmat, R=rmat, N1=n1, F0=f0, DtN1=dtn1)


def diagonalization_residual(spec: DampingSpec, t, xi_mag, partition=None, n1_scale=0.5):
    """(identity defect of the first conjugation, max-norm of R1)."""
    _elliptic_check("v", spec, t, xi_mag, partition)
    mats = diagonalization_matrices(spec, t, xi_mag, n1_scale)
    a, d, r = mats["A"], mats["D"], mats["R"]
    defect = -a @ _MM + _MM @ (d + r)
    scale = max(1.0, float(np.abs(a).max()))
    n1, f0, dtn1 = mats["N1"], mats["F0"], mats["DtN1"]
    ident = np.eye(2) + n1
    if abs(np.linalg.det(ident)) < 1e-12:
        raise np.linalg.LinAlgError("I + N1 is singular at this point")
    r1 = -np.linalg.solve(ident, dtn1 - r @ n1 + n1 @ f0)
    return DiagonalizationResidual(float(np.abs(defect).max() / scale), float(np.abs(r1).max()))


def conjugation_defect(spec, t, xi_mag, n1_scale=0.5):
    """max-norm of D_t N1 - (D + R) N1 + N1 (D + F0 + R1), the second conjugation identity."""
    mats = diagonalization_matrices(spec, t, xi_mag, n1_scale)
    d, r, n1, f0, dtn1 = mats["D"], mats["R"], mats["N1"], mats["F0"], mats["DtN1"]
    ident = np.eye(2) + n1
    r1 = -np.linalg.solve(ident, dtn1 - r @ n1 + n1 @ f0)
    lhs = dtn1 - (d + r) @ ident
    rhs = -ident @ (d + f0 + r1)
    return float(np.abs(lhs - rhs).max())


# -------------------------------------------------------------- vorticity

def vorticity_mode(spec: DampingSpec, s, t, w_init):
    """Rotational part of the velocity: w(t) = w(s) exp(-int_s^t b)."""
    return w_init * math.exp(-damping_integral(spec, s, t))
