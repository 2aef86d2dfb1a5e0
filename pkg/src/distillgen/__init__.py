"""Generalisation of distilled policies: ensembles, augmentation and explore-go data.

Subpackages and modules:

- ``nn``: dense ReLU networks with exact backprop and stacked ensembles
- ``groups``: rotations, cyclic subgroups, kappa and full data augmentation
- ``envs``: the two-link reacher, Four Rooms and a one-dimensional Lipschitz MDP
- ``teachers``: scripted teachers and the pure explorer
- ``data``: dataset construction and persistence
- ``distill``: student training
- ``ensemble``: ensembles, evaluation and seed aggregation
- ``theory``: NTK/NNGP kernels, closed-form ensemble predictions and bounds
- ``experiments``: end-to-end drivers
- ``cli``: command-line front end
"""

__version__ = "0.1.0"
