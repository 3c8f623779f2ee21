"""Phase-time zones and the elliptic-zone residuals along fixed-frequency rays."""
import numpy as np

from dampinglab.damping_core import DampingSpec
from dampinglab.fitting import fit_power_exponent, log_grid
from dampinglab.mode_dynamics import ZonePartition, classify_zone, diagonalization_residual, elliptic_residual

spec = DampingSpec(1.0, -0.5)
part = ZonePartition.default(spec)
print(f"partition: eps={part.eps}, N={part.big_n}, c0={part.c0}, t_ell={part.t_ell:.3f}")

t = np.concatenate([[0.0], log_grid(1e-1, 1e4, 6)])
xi = [0.01, 0.1, 1.0, 10.0, 100.0]
print("t \\ xi " + " ".join(f"{x:>8g}" for x in xi))
for tt in t:
    print(f"{tt:7.3g} " + " ".join(f"{classify_zone('v', spec, part, tt, x):>8}" for x in xi))

tr = log_grid(1e2, 1e6, 17)
for lam in (-0.5, -1.0):
    sp = DampingSpec(1.0, lam)
    for x in (0.05, 0.2):
        full = [elliptic_residual("v", sp, tt, x) for tt in tr]
        rem = [elliptic_residual("v", sp, tt, x, part="remainder") for tt in tr]
        r1 = [diagonalization_residual(sp, tt, x).r1_norm for tt in tr]
        f = lambda y: fit_power_exponent(np.column_stack([tr, y])).exponent
        print(f"lam={lam:5.2f} xi={x:4.2f}: r_v {f(full):.3f}, xi-free part {f(rem):.3f}, "
              f"R1 {f(r1):.3f}, target {-(2 - lam):.2f}")
