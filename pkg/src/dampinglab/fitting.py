"""Least-squares rate fits over time series."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

MIN_SAMPLES = 5


class FitError(ValueError):
    pass


@dataclass(frozen=True)
class RateFit:
    exponent: float
    log_exponent: float
    r_squared: float
    window: tuple
    residual_max: float
    n_samples: int = 0


def _select(series, window):
    arr = np.asarray(series, dtype=float)
    if arr.ndim != 2 or arr.shape[1] != 2:
        raise FitError("series must be a sequence of (t, y) pairs")
    t, y = arr[:, 0], arr[:, 1]
    if window is not None:
        lo, hi = window
        if not lo < hi:
            raise FitError(f"empty window {window}")
        keep = (t >= lo) & (t <= hi)
        t, y = t[keep], y[keep]
    if t.size < MIN_SAMPLES:
        raise FitError(f"need at least {MIN_SAMPLES} samples in window, got {t.size}")
    if np.any(y <= 0) or not np.all(np.isfinite(y)):
        raise FitError("values must be positive and finite")
    return t, y


def _regress(x, z):
    """Slope, intercept, r^2 and max |residual| of z against x."""
    slope, icpt = np.polyfit(x, z, 1)
    res = z - (slope * x + icpt)
    ss_tot = float(np.sum((z - z.mean()) ** 2))
    ss_res = float(np.sum(res ** 2))
    # a flat series is fitted perfectly by slope 0
    r2 = 1.0 if ss_tot <= 1e-28 * max(1.0, z.size) else max(0.0, 1.0 - ss_res / ss_tot)
    return float(slope), float(icpt), r2, float(np.max(np.abs(res)))


def fit_power_exponent(series, window=None, log_correction=0.0) -> RateFit:
    """Slope of ln y against ln(1+t).

    ``log_correction`` divides out ln(e+t)^k before the fit; pass ``True``
    for k = 1.
    """
    t, y = _select(series, window)
    k = 1.0 if log_correction is True else float(log_correction)
    z = np.log(y) - k * np.log(np.log(np.e + t))
    slope, _, r2, rmax = _regress(np.log1p(t), z)
    return RateFit(slope, k, r2, (float(t[0]), float(t[-1])), rmax, int(t.size))


def loglog_span(t_lo, t_hi):
    return float(np.log(np.log(np.e + t_hi)) - np.log(np.log(np.e + t_lo)))


def fit_log_exponent(series, window=None, prefactor=0.0, min_span=1.0) -> RateFit:
    """Slope of ln y against ln ln(e+t), after dividing out (1+t)^prefactor.

    The window must span at least ``min_span`` in ln ln(e+t); a power-law
    prefactor is declared, never fitted.
    """
    t, y = _select(series, window)
    span = loglog_span(t[0], t[-1])
    if span < min_span:
        raise FitError(f"window spans {span:.3f} in ln ln(e+t), need {min_span}")
    z = np.log(y) - prefactor * np.log1p(t)
    slope, _, r2, rmax = _regress(np.log(np.log(np.e + t)), z)
    return RateFit(float(prefactor), slope, r2, (float(t[0]), float(t[-1])), rmax, int(t.size))


def fit_power_log(series, window=None) -> RateFit:
    """Joint fit ln y = p ln(1+t) + q ln ln(e+t) + c; returns p as exponent, q as log_exponent."""
    t, y = _select(series, window)
    a = np.column_stack([np.log1p(t), np.log(np.log(np.e + t)), np.ones_like(t)])
    z = np.log(y)
    coef, *_ = np.linalg.lstsq(a, z, rcond=None)
    res = z - a @ coef
    ss_tot = float(np.sum((z - z.mean()) ** 2))
    r2 = 1.0 if ss_tot == 0 else max(0.0, 1.0 - float(np.sum(res ** 2)) / ss_tot)
    return RateFit(float(coef[0]), float(coef[1]), r2, (float(t[0]), float(t[-1])),
                   float(np.max(np.abs(res))), int(t.size))


def log_grid(lo, hi, points):
    return np.logspace(np.log10(lo), np.log10(hi), int(points))


def drop_first_decade(t):
    """Mask keeping samples beyond the first decade of a log grid."""
    t = np.asarray(t, dtype=float)
    return t >= 10.0 * t[0]
