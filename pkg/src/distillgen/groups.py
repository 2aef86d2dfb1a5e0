"""Planar rotations acting on the 6-D reacher state.

The reacher observation stacks three 2-D points (shoulder, elbow, hand),
so a rotation by ``alpha`` acts through a block-diagonal matrix of three
identical 2x2 rotation blocks.
"""

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .errors import ContractError

TWO_PI = 2.0 * np.pi
ANGLE_TOL = 1e-12


def canonical(angle):
    a = float(np.mod(angle, TWO_PI))
    return 0.0 if a >= TWO_PI - ANGLE_TOL else a


@dataclass(frozen=True)
class GroupElement:
    """A rotation, stored as an angle in [0, 2*pi)."""

    angle: float

    def __post_init__(self):
        object.__setattr__(self, "angle", canonical(self.angle))

    def __mul__(self, other):
        return GroupElement(self.angle + other.angle)

    def inverse(self):
        return GroupElement(-self.angle)

    def close_to(self, other, tol=ANGLE_TOL):
        d = abs(self.angle - other.angle)
        return min(d, TWO_PI - d) <= tol


IDENTITY = GroupElement(0.0)


@dataclass(frozen=True)
class CyclicSubgroup:
    """C_k: the k rotations by multiples of 2*pi/k (k=1 is the trivial group)."""

    k: int

    def __post_init__(self):
        if int(self.k) < 1:
            raise ContractError("cyclic subgroup order must be >= 1")

    @property
    def angles(self):
        return TWO_PI * np.arange(self.k) / self.k

    def elements(self):
        return [GroupElement(a) for a in self.angles]

    def __contains__(self, g):
        return any(g.close_to(b, 1e-9) for b in self.elements())


def _angle(g):
    return g.angle if isinstance(g, GroupElement) else float(g)


def rot2(alpha):
    c, s = np.cos(alpha), np.sin(alpha)
    return np.array([[c, -s], [s, c]])


def rep_matrix(g):
    """6x6 block-diagonal rotation matrix acting on (x_s, y_s, x_e, y_e, x_h, y_h)."""
    r = rot2(_angle(g))
    out = np.zeros((6, 6))
    for i in range(3):
        out[2 * i:2 * i + 2, 2 * i:2 * i + 2] = r
    return out


def apply(g, s):
    """Rotate one state ``(6,)`` or a batch ``(n, 6)`` of states."""
    s = np.asarray(s, dtype=np.float64)
    if s.shape[-1] != 6:
        raise ContractError(f"expected 6-D reacher states, got trailing dimension {s.shape[-1]}")
    pts = s.reshape(s.shape[:-1] + (3, 2))
    return (pts @ rot2(_angle(g)).T).reshape(s.shape)


def opnorm_diff(a, b):
    """Operator norm of rep(a) - rep(b), i.e. 2|sin((a - b)/2)|."""
    return float(2.0 * abs(np.sin((_angle(a) - _angle(b)) / 2.0)))


def kappa(B):
    """Worst-case distance from a rotation to its nearest element of ``B``.

    The worst rotation sits halfway between two neighbouring subgroup
    angles, which gives 2 sin(pi / (2k)); :func:`kappa_grid` is the
    brute-force check.
    """
    k = B.k if isinstance(B, CyclicSubgroup) else int(B)
    if k < 1:
        raise ContractError("cyclic subgroup order must be >= 1")
    return float(2.0 * np.sin(np.pi / (2 * k)))


def kappa_grid(k, resolution=1e-4, exact_opnorm=False):
    """Grid-search max_g min_b ||rep(g) - rep(b)||_op over g at ``resolution`` radians.

    With ``exact_opnorm`` the operator norm is taken from an SVD of the
    6x6 difference instead of the closed form (slow; for small grids).
    """
    gs = np.arange(0.0, TWO_PI, resolution)
    bs = CyclicSubgroup(k).angles
    if exact_opnorm:
        reps_b = [rep_matrix(b) for b in bs]
        vals = [min(np.linalg.norm(rep_matrix(g) - rb, ord=2) for rb in reps_b) for g in gs]
        return float(max(vals))
    diffs = 2.0 * np.abs(np.sin((gs[:, None] - bs[None, :]) / 2.0))
    return float(diffs.min(axis=1).max())


def augment(data, B):
    """Full data augmentation of a reacher dataset under every element of ``B``.

    Each sample ``(s, y)`` yields ``(apply(b, s), y)`` for every ``b`` in
    ``B``; the output is ordered element-major (all of b_0, then b_1, ...).
    """
    from .data import Dataset  # local import: data depends on groups

    if data.states.ndim != 2 or data.states.shape[1] != 6:
        raise ContractError("augmentation needs 6-D reacher states")
    elements = B.elements() if isinstance(B, CyclicSubgroup) else CyclicSubgroup(B).elements()
    states = np.concatenate([apply(b, data.states) for b in elements])
    reps = len(elements)
    targets = np.concatenate([data.targets] * reps)
    sources = np.concatenate([data.sources] * reps)
    meta = dict(data.meta, augmented_k=reps)
    return Dataset(states, targets, sources, data.kind, data.env, data.target_kind, meta)


def permutation_check(aug, b, tol=1e-9):
    """True iff rotating every state of ``aug`` by ``b`` permutes the dataset onto itself.

    A rotated state must land within ``tol`` of a stored state carrying
    the same target.
    """
    states = np.asarray(aug.states, dtype=np.float64)
    targets = np.asarray(aug.targets)
    if len(states) == 0:
        return True
    tree = cKDTree(states)
    rotated = apply(b, states)
    hits = tree.query_ball_point(rotated, r=tol)
    t_flat = targets.reshape(len(targets), -1)
    for i, js in enumerate(hits):
        if not any(np.array_equal(t_flat[i], t_flat[j]) for j in js):
            return False
    return True
