"""Worst-case equality solutions against the two Gronwall-type bounds."""
import numpy as np

from dampinglab.gronwall import calibrate, gronwall_check, random_suite, seed_scenario

K = calibrate()
seed = gronwall_check(seed_scenario(), decay=True)
print(f"seed scenario: sup ratio {seed.sup_ratio:.3f}, decay ratio {seed.decay_ratio:.3f}, K = {K:.3f}")

K, reps = random_suite(200, seed=0, K=K)
sup = np.array([r.sup_ratio for r in reps])
dec = np.array([r.decay_ratio for r in reps])
print(f"200 scenarios: all pass = {all(r.passed for r in reps)}")
print(f"sup ratio   max {sup.max():.3f}, median {np.median(sup):.3f}")
print(f"decay ratio max {dec.max():.3f}, median {np.median(dec):.3f}")
