"""
Numerical checks of the theory
==============================

Four small experiments:

1. kappa for cyclic subgroups of the rotation group, analytic against brute force;
2. a wide trained ensemble against the closed-form infinite-width mean;
3. coverage of the Monte-Carlo tail bound and its Lambert-W threshold;
4. the Lipschitz return-gap bound on a one-dimensional MDP.
"""

import numpy as np

from distillgen import experiments as ex
from distillgen import theory

for k, exact, grid in ex.kappa_check(ks=(1, 2, 4, 8, 16)):
    print(f"C_{k:<2d} kappa {exact:.6f}  grid search {grid:.6f}")

# A modest width keeps this quick; the acceptance test uses width 2048.
res = ex.ntk_check(width=512, members=30)
print("ensemble mean", np.round(res.ensemble_mean, 4))
print("closed form  ", np.round(res.gp, 4), f"(max deviation {res.max_abs:.4f})")

tail = ex.tail_check(n_ensembles=20_000)
for d, e, b in zip(tail.deltas[::4], tail.empirical[::4], tail.bound[::4]):
    print(f"delta = {d:.2f} sigma: exceedance {e:.4f} <= bound {b:.4f}")
exact, upper = theory.delta_for_confidence(1.0, 0.05)
print(f"threshold at eps = 0.05: {exact:.4f} (Newton), {upper:.4f} (closed-form upper bound)")

check = ex.micro_bound_check(n_policies=5)
for gap, bound, lip in zip(check.gaps, check.bounds, check.lipschitz):
    print(f"L_pi = {lip:.2f}: return gap {gap:.4f} <= bound {bound:.4f}")
