"""Decay of the density and velocity norms under growing damping.

Run from the repository root:  python demos/linear_decay.py
"""
import numpy as np

from dampinglab.damping_core import DampingSpec
from dampinglab.fitting import fit_power_exponent, log_grid
from dampinglab.green_verifier import RadialProfile, radial_norm_series

spec = DampingSpec(mu=1.0, lam=-0.5)
n = 3
profile = RadialProfile("gaussian", 1.0, n)
t = log_grid(1e2, 1e6, 17)

# one batch of mode solves gives both entries of the first column
res = radial_norm_series(["G11", "G21"], 0, profile, spec, 0.0, t)

v = res.series["G11"]
u = res.series["G21"]
print(f"{'t':>10} {'|v|':>12} {'|u|':>12}")
for tt, a, b in zip(v.t[::4], v.values[::4], u.values[::4]):
    print(f"{tt:10.3g} {a:12.5g} {b:12.5g}")

pv = fit_power_exponent(v.pairs()).exponent
pu = fit_power_exponent(u.pairs()).exponent
lam = spec.lam
print(f"v: fitted {pv:.4f}, expected {-(1 + lam) * n / 4:.4f}")
print(f"u: fitted {pu:.4f}, expected {-(1 + lam) * n / 4 - (1 - lam) / 2:.4f}")
print(f"determinant check: worst defect {res.info.det_defect:.2e} over {res.info.det_points} points")

# slower damping growth gives faster decay
for lam in (-0.25, -0.75):
    s2 = DampingSpec(1.0, lam)
    r = radial_norm_series(["G11"], 0, profile, s2, 0.0, t)
    print(f"lam={lam:5.2f}: v exponent {fit_power_exponent(r.series['G11'].pairs()).exponent:.4f}"
          f" (expected {-(1 + lam) * n / 4:.4f})")
