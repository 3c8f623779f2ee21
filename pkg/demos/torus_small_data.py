"""Small data on the periodic box: nonlinear run against its linearization.

A shorter horizon than the acceptance run keeps this under a minute.
"""
import numpy as np

from dampinglab.damping_core import DampingSpec
from dampinglab import nonlinear_torus as nt

spec = DampingSpec(1.0, -0.5)
cfg = nt.SolverConfig(spec, grid=64, t_end=20.0, cfl=0.8)
times = np.geomspace(0.05, cfg.t_end, 12)
for amp in (1e-2, 1e-3):
    init = nt.random_initial_state(cfg, amp, seed=0)
    a = nt.run(init, cfg, times=times, keep_states=True)
    b = nt.run(init, nt.linear_companion(cfg), times=times, keep_states=True)
    n0 = nt.state_norm(init, cfg)
    disc = [nt.state_distance(x, y, cfg) / n0 for x, y in zip(a.history, b.history)]
    print(f"amplitude {amp:g}: max relative discrepancy {max(disc):.3g} ({max(disc) / amp:.3g} x amplitude), "
          f"{a.steps} steps, mean defect {a.mean_defect:.1e}")

print(f"{'t':>8} {'curl':>11} {'energy ratio':>13}")
for t, c, e in zip(a.t, a.curl, a.energy_ratio):
    print(f"{t:8.3g} {c:11.4g} {e:13.5f}")
