"""Large-time behaviour of the two convolution integrals.

Compares the three-case classifier with converged quadrature and with the
two-region estimate in sharp_convolution.
"""
import numpy as np

from dampinglab.fitting import fit_power_exponent
from dampinglab.kernel_calculus import predict_convolution, quad_convolution, quad_series, sharp_convolution

t = np.geomspace(1e3, 1e7, 17)
print(f"{'lam':>6} {'beta':>5} {'gamma':>6} | {'classifier':>10} {'sharp':>8} {'quad':>8}")
for lam in (-0.25, -0.5, -0.75):
    for beta in (1.0, 2.0, 4.0):
        for gam in (0.5, 1.0, 2.0):
            pred = predict_convolution(beta, gam, lam)
            sharp = sharp_convolution(beta, gam, lam)
            vals = quad_series(quad_convolution, t, beta, gam, lam)
            fit = fit_power_exponent(np.column_stack([t, vals]), log_correction=sharp.log_power)
            flag = "" if abs(fit.exponent - pred.exponent) <= (0.1 if pred.log_power else 0.05) else "  <- differs"
            print(f"{lam:6.2f} {beta:5.1f} {gam:6.1f} | {pred.exponent:10.3f} {sharp.exponent:8.3f} "
                  f"{fit.exponent:8.3f}{flag}")
