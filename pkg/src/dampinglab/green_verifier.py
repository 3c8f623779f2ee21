"""L2 norms of Green-matrix actions on radial data, and their decay envelopes.

For radial data with Fourier magnitude phi_hat(r),

    || d^alpha G_ij(t,s) phi ||^2 = c_n int r^(2 alpha) |G_ij(t,s,r)|^2 phi_hat(r)^2 r^(n-1) dr

with c_n = |S^(n-1)| / (2 pi)^n.  The dimension only enters through the
weight, so n = 7 costs the same as n = 2.
"""
from __future__ import annotations

from dataclasses import dataclass, field
import csv
import math

import numpy as np
from scipy.special import gammaln

from .damping_core import DampingSpec, gamma_array
from .fitting import RateFit, fit_log_exponent, fit_power_exponent
from .mode_dynamics import PropagationInfo, propagate

PROFILE_KINDS = ("gaussian", "flat_hat", "ring")
ENTRIES = ("G11", "G12", "G21", "G22", "G22opt", "G22can", "wave_v", "wave_u")
_INDEX = {"G11": (0, 0), "G12": (0, 1), "G21": (1, 0), "G22": (1, 1),
          "G22opt": (1, 1), "G22can": (1, 1), "wave_v": (0, 0), "wave_u": (0, 0)}
CSV_COLUMNS = ("t", "s", "value", "envelope", "ratio")


class QuadratureNotConverged(RuntimeError):
    pass


def _smooth_step(x):
    """C-infinity step: 0 for x <= 0, 1 for x >= 1."""
    x = np.clip(x, 0.0, 1.0)
    with np.errstate(divide="ignore", over="ignore"):
        a = np.where(x > 0, np.exp(-1.0 / np.where(x > 0, x, 1.0)), 0.0)
        b = np.where(x < 1, np.exp(-1.0 / np.where(x < 1, 1.0 - x, 1.0)), 0.0)
    return a / (a + b)


@dataclass(frozen=True)
class RadialProfile:
    """Radial Fourier magnitude |phi_hat|(r) of the initial datum."""

    kind: str = "gaussian"
    scale: float = 1.0
    n: int = 2
    width: float = 0.02

    def __post_init__(self):
        if self.kind not in PROFILE_KINDS:
            raise ValueError(f"profile kind must be one of {PROFILE_KINDS}")
        if not self.scale > 0:
            raise ValueError("scale must be positive")
        if int(self.n) != self.n or self.n < 1:
            raise ValueError("dimension n must be a positive integer")

    def __call__(self, r):
        r = np.asarray(r, float)
        if self.kind == "gaussian":
            return np.exp(-0.5 * (r * self.scale) ** 2)
        if self.kind == "flat_hat":
            return 1.0 - _smooth_step(r / self.scale - 1.0)
        w = self.width * self.scale
        return np.exp(-0.5 * ((r - self.scale) / w) ** 2)


def sphere_constant(n):
    """c_n = |S^(n-1)| / (2 pi)^n."""
    return math.exp(math.log(2.0) + 0.5 * n * math.log(math.pi) - gammaln(0.5 * n) - n * math.log(2 * math.pi))


@dataclass(frozen=True)
class DecayPrediction:
    """Envelope (1+t)^t_prefactor (1+s)^s_prefactor Gamma^gamma_power ln(e+t)^log_power.

    Gamma is the algebraic or logarithmic decay function, whichever matches
    the damping exponent.  Absolute constants are not part of it.
    """

    entry: str
    alpha: int
    gamma_power: float
    t_prefactor: float = 0.0
    s_prefactor: float = 0.0
    log_power: float = 0.0
    critical: bool = False


def decay_prediction(entry, alpha, n, lam) -> DecayPrediction:
    """Envelope of || d^alpha entry phi || for L1 to L2 data."""
    if entry not in ENTRIES:
        raise ValueError(f"unknown entry {entry!r}")
    if entry == "G22can":
        raise ValueError("G22can has a three-term envelope; use cancellation_envelope")
    k = 0.5 * n + alpha
    crit = lam == -1.0
    table = {
        "G11": (k, 0.0, 0.0),
        "G12": (k + 1, 0.0, lam),
        "G21": (k + 1, lam, 0.0),
        "G22": (k, lam, -lam),
        "G22opt": (k + 2, lam, lam),
        "wave_v": (k, 0.0, 0.0),
        "wave_u": (k, lam, -lam),
    }
    gp, tp, sp = table[entry]
    return DecayPrediction(entry, int(alpha), gp, tp, sp, 0.0, crit)


def predicted_envelope(prediction: DecayPrediction, spec: DampingSpec, n, s, t):
    """Envelope value with unit constant; vectorized in t."""
    if prediction.critical != spec.critical:
        raise ValueError("prediction and damping spec disagree on the critical branch")
    if prediction.log_power and not spec.critical:
        raise ValueError("log powers belong to the critical branch only")
    t = np.asarray(t, float)
    g = gamma_array(spec, s, t)
    out = (1.0 + t) ** prediction.t_prefactor * (1.0 + s) ** prediction.s_prefactor * np.asarray(g) ** prediction.gamma_power
    if prediction.log_power:
        out = out * np.log(np.e + t) ** prediction.log_power
    return out if out.ndim else float(out)


def cancellation_envelope(spec: DampingSpec, n, alpha, s, t, kappa=4.0, c_kappa=1.0):
    """Three-term envelope for G22 that exposes the cancellation in the u-u entry."""
    lam = spec.lam
    t = np.asarray(t, float)
    g = np.asarray(gamma_array(spec, s, t))
    lead = ((1.0 + t) / (1.0 + s)) ** lam * g ** (0.5 * n + alpha)
    return lead * ((1.0 + s) ** (2 * lam) * g ** 2 + (1.0 + s) ** (1.0 - lam) + c_kappa * g ** kappa)


@dataclass
class NormSeries:
    entries: list = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    def append(self, t, s, value):
        if value < 0:
            raise ValueError("norms are nonnegative")
        if self.entries and t <= self.entries[-1][0]:
            raise ValueError("t must be strictly increasing")
        self.entries.append((float(t), float(s), float(value)))

    @property
    def t(self):
        return np.array([e[0] for e in self.entries])

    @property
    def values(self):
        return np.array([e[2] for e in self.entries])

    def pairs(self):
        return np.column_stack([self.t, self.values])

    def to_csv(self, path, envelope=None):
        env = np.full(len(self.entries), np.nan) if envelope is None else np.asarray(envelope, float)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(CSV_COLUMNS)
            for (t, s, v), e in zip(self.entries, env):
                w.writerow([repr(t), repr(s), repr(v), repr(float(e)), repr(v / e if e > 0 else float("nan"))])


def log_nodes(grid_size, r_min=1e-6, r_max=1e2):
    """2*grid_size - 1 log-spaced nodes; every second node forms the coarse grid."""
    if grid_size < 64:
        raise ValueError("grid_size must be at least 64")
    return np.geomspace(r_min, r_max, 2 * grid_size - 1)


def _trapezoid_log(u, f):
    """Trapezoid rule for int f(r) dr on log-spaced nodes, f given per node."""
    g = f * np.exp(u)
    return float(np.sum(0.5 * (g[1:] + g[:-1]) * np.diff(u)))


@dataclass
class NormResult:
    series: dict
    nodes: np.ndarray
    rel_change: dict
    info: PropagationInfo


def radial_norm_series(entries, alpha, profile: RadialProfile, spec: DampingSpec, s, t_grid,
                       grid_size=128, r_min=1e-6, r_max=1e2, qtol=1e-3, tol=1e-10) -> NormResult:
    """Norm series for several entries of one system from a single batch of mode solves.

    All entries must come from the same mode system (coupled, or one wave
    system).  Node doubling compares the fine grid with its even-indexed
    subgrid; a disagreement above ``qtol`` raises.
    """
    entries = [entries] if isinstance(entries, str) else list(entries)
    systems = {("wave_v" if e == "wave_v" else "wave_u" if e == "wave_u" else "coupled") for e in entries}
    if len(systems) != 1:
        raise ValueError("entries must share one mode system")
    system = systems.pop()
    n = profile.n
    r = log_nodes(grid_size, r_min, r_max)
    u = np.log(r)
    phi = profile(r)
    base = r ** (2 * alpha + n - 1) * phi ** 2
    t_grid = np.atleast_1d(np.asarray(t_grid, float))
    # per-mode share of the integral, used to drop negligible modes early
    weights = np.sqrt(base * r)
    info = PropagationInfo()
    g = propagate(system, spec, r, s, t_grid, tol=tol, info=info, weights=weights)
    cn = sphere_constant(n)
    series, change = {}, {}
    for e in entries:
        i, j = _INDEX[e]
        sq = g[..., i, j] ** 2 * base
        ns = NormSeries(meta={"entry": e, "alpha": alpha, "profile": profile, "spec": spec, "system": system})
        worst = 0.0
        for k, t in enumerate(t_grid):
            fine = cn * _trapezoid_log(u, sq[k])
            coarse = cn * _trapezoid_log(u[::2], sq[k][::2])
            if fine > 0:
                rel = abs(fine - coarse) / fine
                worst = max(worst, rel)
                if rel > qtol:
                    lo = float(r[np.argmax(sq[k] * r > 1e-3 * np.max(sq[k] * r))])
                    raise QuadratureNotConverged(
                        f"{e} at t={t:.4g}: node doubling changes the norm by {rel:.2e}; "
                        f"mass starts near r={lo:.3g} (r_min={r_min:g})")
            ns.append(t, s, math.sqrt(max(fine, 0.0)))
        series[e] = ns
        change[e] = worst
    return NormResult(series, r, change, info)


def radial_l2_norm(entry, alpha, profile: RadialProfile, spec: DampingSpec, s, t, grid_size=128, **kw):
    """|| d^alpha G_entry(t,s) phi || at a single time."""
    res = radial_norm_series([entry], alpha, profile, spec, s, [t], grid_size=grid_size, **kw)
    return float(res.series[entry].values[0])


def profile_norm(profile: RadialProfile, alpha=0, grid_size=128, r_min=1e-6, r_max=1e2):
    """|| d^alpha phi || by the same quadrature."""
    r = log_nodes(grid_size, r_min, r_max)
    f = r ** (2 * alpha + profile.n - 1) * profile(r) ** 2
    return math.sqrt(sphere_constant(profile.n) * _trapezoid_log(np.log(r), f))


@dataclass
class GreenVerdict:
    fit: RateFit
    upper_bounded: bool
    lower_bounded: bool | None
    upper_ratio: float
    lower_ratio: float
    series: NormSeries
    envelope: np.ndarray

    @property
    def passed(self):
        return self.upper_bounded and self.lower_bounded is not False


def verify_green_decay(entry, alpha, profile: RadialProfile, spec: DampingSpec, n, s, t_grid,
                       grid_size=128, ratio_tol=2.0, two_sided=None, series: NormSeries | None = None):
    """Measured norm over envelope: calibrated on the first decade, bounded on the rest.

    The constant is the extreme ratio on the first decade of ``t_grid``;
    later ratios must stay within ``ratio_tol`` of it (above, and for G11
    also below).  ``fit`` is the power exponent, or for the critical damping
    the log exponent after dividing out the envelope's algebraic prefactor.
    """
    if profile.n != n:
        raise ValueError("profile dimension and n disagree")
    t_grid = np.asarray(t_grid, float)
    if t_grid[-1] < (1e3 - 1e-9) * max(t_grid[0], 1.0 + s):
        raise ValueError("t_grid must span at least three decades beyond s")
    if series is None:
        series = radial_norm_series([entry], alpha, profile, spec, s, t_grid, grid_size=grid_size).series[entry]
    if entry == "G22can":
        env = cancellation_envelope(spec, n, alpha, s, t_grid)
        pred = None
    else:
        pred = decay_prediction(entry, alpha, n, spec.lam)
        env = predicted_envelope(pred, spec, n, s, t_grid)
    ratio = series.values / env
    first = t_grid < 10.0 * t_grid[0]
    if not first.any() or first.all():
        first = np.arange(t_grid.size) < max(2, t_grid.size // 4)
    up = float(np.max(ratio[~first]) / np.max(ratio[first]))
    lo = float(np.min(ratio[~first]) / np.min(ratio[first]))
    if two_sided is None:
        two_sided = entry == "G11"
    if spec.critical:
        fit = fit_log_exponent(series.pairs(), prefactor=pred.t_prefactor if pred else 0.0, min_span=0.0)
    else:
        fit = fit_power_exponent(series.pairs())
    return GreenVerdict(fit, up <= ratio_tol, (lo >= 1.0 / ratio_tol) if two_sided else None,
                        up, lo, series, env)
