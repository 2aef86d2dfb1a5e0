"""
Which states to distil on in Four Rooms
=======================================

Contexts differ in door positions, start pose and goal.  A planner teacher
labels three datasets of equal size:

* Teacher: the teacher's own trajectories,
* Explore-Go: teacher trajectories that start after a random walk,
* Mixed: half teacher trajectories, half random-walk states.

Students learn either the teacher's action probabilities (distillation)
or the actions that were actually taken (behaviour cloning).

Pass ``--full`` for the acceptance-test scale (about half an hour on one core).
"""

import sys

from distillgen import experiments as ex
from distillgen.data import unique_states
from distillgen.envs import fourrooms as fr

full = "--full" in sys.argv

env = fr.FourRoomsEnv()
train, _, test = fr.fourrooms_generate(0, 20, 8, 20)
print("\n".join(train[0].walls), "\nstart", train[0].start, "goal", train[0].goal)

# Exploration before the teacher takes over reaches more of the grid.
sets = ex.grid_datasets(env, train, seed=0, size=20000 if full else 4000)
for kind, d in sets.items():
    print(f"{kind:10s} {len(d)} samples, {unique_states(d)} distinct states")

res = ex.fourrooms_trend(seeds=range(5) if full else range(1), n_members=10 if full else 2,
                         sizes=(1, 10) if full else (1, 2), size=20000 if full else 4000)
for (loss, kind, n), mean in sorted(res.means().items()):
    print(f"{loss:16s} {kind:10s} N={n:2d}  test {mean:.3f}  train {res.means('train')[(loss, kind, n)]:.3f}")
