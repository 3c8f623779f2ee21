"""Asymptotics of the time convolutions Gamma^beta * (1+s)^-gamma.

Two families are covered:

* algebraic, for lam in (-1, 0):
  I(t) = int_0^t Gamma(t,s)^beta (1+s)^-gamma ds
* logarithmic, for the critical damping:
  J(t) = int_0^t (1 + ln((1+t)/(1+s)))^-beta (1+s)^-1 ln(e+s)^-gamma ds

For each there is the three-case upper-bound classifier (``predict_*``), a
sharp two-sided rate derived from the near-diagonal scaling of the kernel
(``sharp_*``) and a quadrature oracle (``quad_*``).
"""
from __future__ import annotations

from dataclasses import dataclass
import math
import warnings

import numpy as np
from scipy.integrate import IntegrationWarning, quad

CASES = ("supercritical", "critical", "subcritical")


class QuadratureError(RuntimeError):
    """Adaptive quadrature failed to reach the requested accuracy."""


@dataclass(frozen=True)
class ConvolutionCase:
    """t^exponent * ln(e+t)^log_power, or ln ln growth when ``loglog_flag``."""

    exponent: float
    log_power: float
    loglog_flag: bool
    case_id: str

    def __post_init__(self):
        if self.case_id not in CASES:
            raise ValueError(f"case_id must be one of {CASES}")
        if self.loglog_flag and self.case_id != "critical":
            raise ValueError("loglog_flag is only meaningful in the critical case")


@dataclass(frozen=True)
class SharpRate:
    """Two-sided large-t rate t^exponent * ln(t)^log_power and which region dominates."""

    exponent: float
    log_power: float
    dominant: str


def _check_params(beta, gamma_exp):
    if not (beta > 0 and math.isfinite(beta)):
        raise ValueError(f"beta must be positive, got {beta}")
    if not (gamma_exp > 0 and math.isfinite(gamma_exp)):
        raise ValueError(f"gamma_exp must be positive, got {gamma_exp}")


def _check_lam(lam):
    if not (-1.0 < lam < 0.0):
        raise ValueError(f"lam must lie in (-1, 0), got {lam}")


def _cmp1(x, tol=1e-12):
    """Sign of x - 1 with a tolerance for exact thresholds."""
    if abs(x - 1.0) <= tol:
        return 0
    return 1 if x > 1 else -1


def predict_convolution(beta, gamma_exp, lam) -> ConvolutionCase:
    """Upper-bound classification of int_0^t Gamma^beta (1+s)^-gamma ds."""
    _check_params(beta, gamma_exp)
    _check_lam(lam)
    a = 0.5 * (1.0 + lam) * beta
    top = _cmp1(max(a, gamma_exp))
    if top > 0:
        return ConvolutionCase(-min(a, gamma_exp), 0.0, False, "supercritical")
    if top == 0:
        return ConvolutionCase(-min(a, gamma_exp), 1.0, False, "critical")
    return ConvolutionCase(1.0 - gamma_exp - a, 0.0, False, "subcritical")


def predict_log_convolution(beta, gamma_exp) -> ConvolutionCase:
    """Classification of the logarithmic convolution; exponents refer to ln(e+t)."""
    _check_params(beta, gamma_exp)
    c = _cmp1(gamma_exp)
    if c > 0:
        return ConvolutionCase(0.0, -min(beta, gamma_exp - 1.0), False, "supercritical")
    if c == 0:
        return ConvolutionCase(0.0, 0.0, True, "critical")
    return ConvolutionCase(0.0, 1.0 - gamma_exp, False, "subcritical")


def _best(parts):
    """Largest (exponent, log_power) among (exponent, log_power, label) triples."""
    top = max(parts, key=lambda p: (round(p[0], 12), p[1]))
    tied = [p[2] for p in parts if round(p[0], 12) == round(top[0], 12) and p[1] == top[1]]
    return SharpRate(top[0], top[1], "+".join(tied))


def _power_sum(p):
    """Growth of int_1^X x^-p dx as (exponent of X, log power)."""
    c = _cmp1(p)
    if c > 0:
        return 0.0, 0.0
    if c == 0:
        return 0.0, 1.0
    return 1.0 - p, 0.0


def sharp_convolution(beta, gamma_exp, lam) -> SharpRate:
    """Two-sided rate of the algebraic convolution in powers of t.

    The early part s < t/2 behaves like t^-a int_0^{t/2} (1+s)^-gamma with
    a = (1+lam) beta / 2.  Near the diagonal the kernel depends on (t-s)
    through t^lam (t-s), so the late part behaves like
    t^-gamma t^-lam int_0^{t^(1+lam)} (1+v)^(-beta/2) dv.
    """
    _check_params(beta, gamma_exp)
    _check_lam(lam)
    a = 0.5 * (1.0 + lam) * beta
    ge, gl = _power_sum(gamma_exp)
    early = (-a + ge, gl, "early")
    ve, vl = _power_sum(0.5 * beta)
    late = (-gamma_exp - lam + (1.0 + lam) * ve, vl, "diagonal")
    return _best([early, late])


def sharp_log_convolution(beta, gamma_exp) -> SharpRate:
    """Two-sided rate of the logarithmic convolution in powers of L = ln t.

    With sigma = ln(1+s) the integral is int_0^L (1+L-sigma)^-beta sigma^-gamma
    d sigma up to bounded factors; small sigma contributes L^-beta times the
    growth of int sigma^-gamma, sigma near L contributes L^-gamma times the
    growth of int (1+x)^-beta.
    """
    _check_params(beta, gamma_exp)
    ge, gl = _power_sum(gamma_exp)
    be, bl = _power_sum(beta)
    return _best([(-beta + ge, gl, "early"), (-gamma_exp + be, bl, "diagonal")])


def _run_quad(f, a, b, rtol):
    if b <= a:
        return 0.0, 0.0
    with warnings.catch_warnings():
        warnings.simplefilter("error", IntegrationWarning)
        try:
            val, err = quad(f, a, b, epsabs=0.0, epsrel=rtol, limit=500)
        except IntegrationWarning as exc:
            raise QuadratureError(f"quadrature on [{a:.6g}, {b:.6g}] did not converge: {exc}") from exc
    return val, err


def _finish(parts, rtol):
    val = sum(p[0] for p in parts)
    err = sum(p[1] for p in parts)
    if val > 0 and err > 10 * rtol * val:
        raise QuadratureError(f"estimated relative error {err / val:.3g} above {rtol:.3g}")
    return val


def quad_convolution(beta, gamma_exp, lam, t, rtol=1e-10) -> float:
    """int_0^t Gamma(t,s)^beta (1+s)^-gamma ds by split adaptive quadrature.

    On (0, t/2) the variable is sigma = ln(1+s).  On (t/2, t) it is
    ln(1+w) with w = (1+t)^(1+lam) - (1+s)^(1+lam), which resolves the
    kernel's near-diagonal scale.
    """
    _check_params(beta, gamma_exp)
    _check_lam(lam)
    if t < 0:
        raise ValueError("t must be nonnegative")
    if t == 0:
        return 0.0
    p = 1.0 + lam
    big = math.exp(p * math.log1p(t))
    lt = math.log1p(t)

    def early(sig):
        w = big * -math.expm1(p * (sig - lt))
        return (1.0 + w) ** (-0.5 * beta) * math.exp((1.0 - gamma_exp) * sig)

    def late(x):
        w = math.expm1(x)
        one_s = (big - w) ** (1.0 / p)
        return (1.0 + w) ** (1.0 - 0.5 * beta) * one_s ** (-gamma_exp - lam) / p

    mid = math.log1p(0.5 * t)
    w_mid = big - math.exp(p * mid)
    return _finish([_run_quad(early, 0.0, mid, rtol),
                    _run_quad(late, 0.0, math.log1p(w_mid), rtol)], rtol)


def quad_log_convolution(beta, gamma_exp, t, rtol=1e-10) -> float:
    """int_0^t (1+ln((1+t)/(1+s)))^-beta (1+s)^-1 ln(e+s)^-gamma ds.

    On (0, t/2) the variable is u = ln ln(e+s); on (t/2, t) it is
    sigma = ln(1+s).
    """
    _check_params(beta, gamma_exp)
    if t < 0:
        raise ValueError("t must be nonnegative")
    if t == 0:
        return 0.0
    lt = math.log1p(t)

    def early(u):
        ell = math.exp(u)
        es = math.exp(ell)  # e + s
        s = es - math.e
        return (1.0 + lt - math.log1p(s)) ** (-beta) * ell ** (1.0 - gamma_exp) * es / (1.0 + s)

    def late(sig):
        s = math.expm1(sig)
        return (1.0 + lt - sig) ** (-beta) * math.log(math.e + s) ** (-gamma_exp)

    mid = 0.5 * t
    return _finish([_run_quad(early, 0.0, math.log(math.log(math.e + mid)), rtol),
                    _run_quad(late, math.log1p(mid), lt, rtol)], rtol)


def quad_series(fn, ts, *args, **kw) -> np.ndarray:
    """Evaluate a quadrature oracle over a grid of times."""
    return np.array([fn(*args, float(t), **kw) for t in np.atleast_1d(ts)])
