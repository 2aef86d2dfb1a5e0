"""
Distilling a reacher teacher into ensembles
===========================================

A two-link arm must bring its hand to a target at the centre of a circle.
The shoulder can sit anywhere on the circle, so every context is a
rotation of every other one.  We distil an inverse-kinematics teacher from
a few training contexts and test the students on random shoulder angles.

Pass ``--full`` for the desk-scale settings used by the acceptance tests
(several minutes); the default finishes in well under a minute.
"""

import sys

import numpy as np

from distillgen import experiments as ex
from distillgen.envs.reacher import subgroup_contexts
from distillgen.groups import kappa

full = "--full" in sys.argv
seeds = range(10) if full else range(2)
sizes = (1, 10, 100) if full else (1, 10)

# The C_4 training contexts: four shoulder positions 90 degrees apart.
for c in subgroup_contexts(4):
    print(f"shoulder at {np.degrees(c.shoulder_angle):5.1f} deg, joints {np.round(c.joint0, 3)}")

# Larger ensembles average away the idiosyncrasies of single students.
res = ex.ensemble_size_trend(seeds=seeds, sizes=sizes, k=4)
for n, mean in res.means().items():
    print(f"N={n:3d}  test return {mean:.3f} ± {res.stds()[n]:.3f}")

# More training shoulder positions shrink kappa, the distance between the
# training subgroup and the full rotation group.
res = ex.subgroup_trend(seeds=seeds, ks=(2, 4, 8))
for k, mean in res.means().items():
    print(f"C_{k}  kappa {kappa(k):.3f}  test {mean:.3f}  train {res.means('train')[k]:.3f}")

# Extra poses help, whether they are symmetric copies or random draws.
res = ex.data_diversity_trend(seeds=seeds)
for kind, mean in res.means().items():
    print(f"{kind:18s} test return {mean:.3f}")
