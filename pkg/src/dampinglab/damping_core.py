"""Scalar calculus of the time-dependent damping b(t) = mu (1+t)^(-lam).

Everything here is closed form.  The critical exponent lam = -1 gets its own
logarithmic branch, and exponents within ``CRITICAL_BAND`` of it use a series
that avoids cancellation in ((1+t)^(1+lam) - (1+s)^(1+lam)) / (1+lam).
"""
from __future__ import annotations

from dataclasses import dataclass
import math
import warnings

import numpy as np

CRITICAL_BAND = 1e-6


@dataclass(frozen=True)
class DampingSpec:
    """Damping strength ``mu`` and growth exponent ``lam`` (b grows when lam < 0)."""

    mu: float
    lam: float

    def __post_init__(self):
        if not (self.mu > 0 and math.isfinite(self.mu)):
            raise ValueError(f"mu must be positive and finite, got {self.mu}")
        if not math.isfinite(self.lam):
            raise ValueError("lam must be finite")
        if self.lam < -1.0:
            raise ValueError(f"lam must be >= -1, got {self.lam}")
        if self.lam >= 0.0:
            # under-damping is allowed only as an untested passthrough
            warnings.warn(f"lam={self.lam} >= 0 is outside the over-damped regime", stacklevel=2)

    @classmethod
    def undamped(cls, lam: float = -0.5) -> "DampingSpec":
        """b = 0.  A test mode for conservation checks; skips validation."""
        obj = object.__new__(cls)
        object.__setattr__(obj, "mu", 0.0)
        object.__setattr__(obj, "lam", float(lam))
        return obj

    @property
    def critical(self) -> bool:
        return self.lam == -1.0


@dataclass(frozen=True)
class GammaValue:
    value: float
    t: float
    s: float

    def __float__(self):
        return float(self.value)


def _check_interval(s, t):
    s = np.asarray(s, dtype=float)
    t = np.asarray(t, dtype=float)
    if np.any(s < 0) or np.any(t < s):
        raise ValueError("require 0 <= s <= t")
    return s, t


def b_of_t(spec: DampingSpec, t):
    """b(t) = mu (1+t)^(-lam)."""
    t = np.asarray(t, dtype=float)
    if np.any(t < 0):
        raise ValueError("t must be nonnegative")
    out = spec.mu * (1.0 + t) ** (-spec.lam)
    return out if out.ndim else float(out)


def b_derivative(spec: DampingSpec, t, order: int = 1):
    """k-th time derivative of b, exact."""
    t = np.asarray(t, dtype=float)
    coef = spec.mu
    for j in range(order):
        coef *= -spec.lam - j
    out = coef * (1.0 + t) ** (-spec.lam - order)
    return out if out.ndim else float(out)


def b_prime(spec: DampingSpec, t):
    return b_derivative(spec, t, 1)


def b_second(spec: DampingSpec, t):
    return b_derivative(spec, t, 2)


def _power_difference(p, s, t):
    """((1+t)^p - (1+s)^p) / p, computed through logs; p -> 0 gives ln((1+t)/(1+s))."""
    ls = np.log1p(s)
    d = np.log1p(t) - ls
    if p == 0.0:
        return d
    # (1+s)^p * expm1(p d) / p, stable for any p and any d >= 0
    return np.exp(p * ls) * np.expm1(p * d) / p


def _power_difference_series(p, s, t, order=6):
    """Taylor series in p of ((1+t)^p - (1+s)^p)/p about p = 0."""
    ls = np.log1p(s)
    lt = np.log1p(t)
    out = np.zeros(np.broadcast(ls, lt).shape)
    fact = 1.0
    for k in range(1, order + 1):
        fact *= k
        out = out + p ** (k - 1) * (lt ** k - ls ** k) / fact
    return out


def damping_integral(spec: DampingSpec, s, t):
    """Integral of b over [s, t]."""
    s, t = _check_interval(s, t)
    out = spec.mu * _power_difference(1.0 - spec.lam, s, t)
    return out if out.ndim else float(out)


def inverse_damping_integral(spec: DampingSpec, s, t):
    """Integral of 1/b over [s, t]."""
    s, t = _check_interval(s, t)
    p = 1.0 + spec.lam
    if p == 0.0:
        val = np.log1p(t) - np.log1p(s)
    elif abs(p) < CRITICAL_BAND:
        val = _power_difference_series(p, s, t)
    else:
        val = _power_difference(p, s, t)
    out = val / spec.mu
    return out if out.ndim else float(out)


def gamma_bracket(spec: DampingSpec, s, t):
    """Gamma(t,s)^(-2) - 1, the argument of the decay function."""
    s, t = _check_interval(s, t)
    p = 1.0 + spec.lam
    if p == 0.0:
        out = np.log1p(t) - np.log1p(s)
    elif abs(p) < CRITICAL_BAND:
        out = p * _power_difference_series(p, s, t)
    else:
        out = p * _power_difference(p, s, t)
    return out if out.ndim else float(out)


def gamma_array(spec: DampingSpec, s, t):
    """Vectorized Gamma(t, s)."""
    out = (1.0 + np.asarray(gamma_bracket(spec, s, t))) ** -0.5
    return out if out.ndim else float(out)


def gamma(spec: DampingSpec, s: float, t: float) -> GammaValue:
    """Decay function Gamma(t,s); equals 1 at t = s and decreases in t."""
    return GammaValue(value=float(gamma_array(spec, s, t)), t=float(t), s=float(s))


def tau_of_t(t):
    """Logarithmic time tau = ln(1+t) used for long horizons."""
    return np.log1p(t)


def t_of_tau(tau):
    return np.expm1(tau)
