"""Logarithmic decay when the damping grows linearly (lambda = -1), n = 7."""
import numpy as np

from dampinglab.damping_core import DampingSpec
from dampinglab.fitting import fit_log_exponent, fit_power_log, log_grid, loglog_span
from dampinglab.green_verifier import RadialProfile, radial_norm_series

spec = DampingSpec(1.0, -1.0)
n = 7
t = log_grid(1e4, 1e10, 25)
res = radial_norm_series(["G11", "G21"], 0, RadialProfile("gaussian", 1.0, n), spec, 0.0, t)

print(f"window spans {loglog_span(t[0], t[-1]):.3f} in ln ln(e+t)")
v = fit_log_exponent(res.series["G11"].pairs(), min_span=0.9)
print(f"v: log exponent {v.log_exponent:.3f} (expected {-n / 4:.3f})")

joint = fit_power_log(res.series["G21"].pairs())
u = fit_log_exponent(res.series["G21"].pairs(), prefactor=-1.0, min_span=0.9)
print(f"u: algebraic {joint.exponent:.4f} (expected -1), log exponent {u.log_exponent:.3f} "
      f"(expected {-n / 4 - 0.5:.3f}); joint fit gives {joint.log_exponent:.3f}")
