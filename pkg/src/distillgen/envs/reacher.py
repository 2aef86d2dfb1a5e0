"""Two-link reacher whose shoulder sits on a circle around the target.

Observations are the target-centred coordinates of shoulder, elbow and
hand.  Actions are joint torques, which live in the arm's own frame, so
rotating a whole context leaves the dynamics (and the optimal torques)
unchanged.  The dynamics are kinematic: the commanded torque sets the
joint velocity, and with ``damping < 1`` a fraction ``1 - damping`` of
the previous velocity carries over.  The default ``damping = 1`` keeps
the coordinates a Markov state.
"""

from dataclasses import dataclass, field

import numpy as np

from ..errors import ContractError, NumericError
from .common import StepResult

# shoulder joint 45 deg counter-clockwise from the shoulder->target axis,
# elbow 90 deg clockwise from the upper arm
DEFAULT_POSE = (np.pi / 4, -np.pi / 2)


@dataclass(frozen=True)
class ReacherConfig:
    link1: float = 0.5
    link2: float = 0.5
    circle_radius: float = 1.0
    dt: float = 0.05
    damping: float = 1.0
    torque_limit: float = 2.0
    max_steps: int = 200
    goal_radius: float = 0.05

    def __post_init__(self):
        if self.circle_radius > self.link1 + self.link2 + 1e-12:
            raise ContractError(
                f"target unreachable: shoulder radius {self.circle_radius} exceeds arm length "
                f"{self.link1 + self.link2}")


@dataclass(frozen=True)
class ReacherContext:
    shoulder_angle: float
    joint0: tuple = DEFAULT_POSE

    def to_dict(self):
        return {"shoulder_angle": float(self.shoulder_angle), "joint0": [float(j) for j in self.joint0]}

    @classmethod
    def from_dict(cls, d):
        return cls(float(d["shoulder_angle"]), tuple(float(j) for j in d["joint0"]))

    def rotated(self, alpha):
        return ReacherContext(float(np.mod(self.shoulder_angle + alpha, 2 * np.pi)), self.joint0)


@dataclass(frozen=True, eq=False)
class ReacherState:
    coords: np.ndarray
    vel: np.ndarray = field(default_factory=lambda: np.zeros(2))
    t: int = 0
    d_min: float = np.inf


def joint_coords(phi, q1, q2, cfg):
    """Coordinates ``(..., 6)`` from shoulder angle and joint angles."""
    phi, q1, q2 = np.broadcast_arrays(*(np.asarray(v, dtype=np.float64) for v in (phi, q1, q2)))
    sx, sy = cfg.circle_radius * np.cos(phi), cfg.circle_radius * np.sin(phi)
    th1 = phi + np.pi + q1
    ex, ey = sx + cfg.link1 * np.cos(th1), sy + cfg.link1 * np.sin(th1)
    th2 = th1 + q2
    hx, hy = ex + cfg.link2 * np.cos(th2), ey + cfg.link2 * np.sin(th2)
    return np.stack([sx, sy, ex, ey, hx, hy], axis=-1)


def coords_joints(coords):
    """Inverse of :func:`joint_coords`: ``(phi, q1, q2)`` from coordinates."""
    c = np.asarray(coords, dtype=np.float64)
    sx, sy, ex, ey, hx, hy = (c[..., i] for i in range(6))
    phi = np.arctan2(sy, sx)
    th1 = np.arctan2(ey - sy, ex - sx)
    th2 = np.arctan2(hy - ey, hx - ex)
    return phi, th1 - phi - np.pi, th2 - th1


def reacher_reward(d_target, d_min, at_goal, max_steps=200):
    """1 at the goal; otherwise a shaping reward whenever the hand gets closer than ever before."""
    if at_goal:
        return 1.0
    if d_target < d_min:
        return (1.0 - 0.5 * d_target) / (0.5 * max_steps)
    return 0.0


def _advance(coords, vel, action, cfg):
    """One Euler step on batched arrays."""
    a = np.clip(action, -cfg.torque_limit, cfg.torque_limit)
    vel = (1.0 - cfg.damping) * vel + a
    phi, q1, q2 = coords_joints(coords)
    return joint_coords(phi, q1 + cfg.dt * vel[..., 0], q2 + cfg.dt * vel[..., 1], cfg), vel


class ReacherEnv:
    name = "reacher"
    obs_dim = 6
    action_dim = 2

    def __init__(self, cfg=None):
        self.cfg = cfg or ReacherConfig()

    @property
    def max_steps(self):
        return self.cfg.max_steps

    def reset(self, ctx, rng=None):
        coords = joint_coords(ctx.shoulder_angle, ctx.joint0[0], ctx.joint0[1], self.cfg)
        return ReacherState(coords, np.zeros(2), 0, float(np.hypot(coords[4], coords[5])))

    def observe(self, state, ctx=None):
        return state.coords

    def step(self, state, ctx, action):
        a = np.asarray(action, dtype=np.float64).reshape(2)
        if not np.all(np.isfinite(a)) or not np.all(np.isfinite(state.coords)):
            raise NumericError("non-finite reacher state or action")
        coords, vel = _advance(state.coords, state.vel, a, self.cfg)
        d = float(np.hypot(coords[4], coords[5]))
        at_goal = d <= self.cfg.goal_radius
        r = reacher_reward(d, state.d_min, at_goal, self.cfg.max_steps)
        t = state.t + 1
        nxt = ReacherState(coords, vel, t, min(d, state.d_min))
        return StepResult(nxt, r, bool(at_goal), bool(not at_goal and t >= self.cfg.max_steps))


def reacher_reset(ctx, cfg=None):
    return ReacherEnv(cfg).reset(ctx)


def reacher_step(state, action, cfg=None):
    return ReacherEnv(cfg).step(state, None, action)


@dataclass(frozen=True, eq=False)
class BatchRollout:
    """Lock-step rollouts over many contexts."""

    returns: np.ndarray
    discounted: np.ndarray
    success: np.ndarray
    lengths: np.ndarray
    states: list = None
    actions: list = None


def rollout_batch(policy, contexts, cfg=None, gamma=0.99, record=False):
    """Roll a batched policy out in every context simultaneously.

    ``policy.act_batch(coords, vel, t)`` maps ``(n, 6)``, ``(n, 2)``,
    ``(n,)`` arrays to ``(n, 2)`` torques.  With ``record`` the visited
    observations and actions are kept per context, in step order.
    """
    cfg = cfg or ReacherConfig()
    n = len(contexts)
    phi = np.array([c.shoulder_angle for c in contexts], dtype=np.float64)
    q = np.array([c.joint0 for c in contexts], dtype=np.float64).reshape(n, 2)
    coords = joint_coords(phi, q[:, 0], q[:, 1], cfg)
    vel = np.zeros((n, 2))
    d_min = np.hypot(coords[:, 4], coords[:, 5])
    alive = np.ones(n, dtype=bool)
    returns = np.zeros(n)
    disc = np.zeros(n)
    success = np.zeros(n, dtype=bool)
    lengths = np.zeros(n, dtype=np.int64)
    states = [[] for _ in range(n)] if record else None
    actions = [[] for _ in range(n)] if record else None
    for t in range(cfg.max_steps):
        idx = np.flatnonzero(alive)
        if idx.size == 0:
            break
        a = np.asarray(policy.act_batch(coords[idx], vel[idx], np.full(idx.size, t)), dtype=np.float64)
        if not np.all(np.isfinite(a)):
            raise NumericError(f"policy produced non-finite torques at step {t}")
        if record:
            for j, i in enumerate(idx):
                states[i].append(coords[i].copy())
                actions[i].append(a[j].copy())
        new_c, new_v = _advance(coords[idx], vel[idx], a, cfg)
        coords[idx], vel[idx] = new_c, new_v
        d = np.hypot(new_c[:, 4], new_c[:, 5])
        goal = d <= cfg.goal_radius
        shaped = np.where(d < d_min[idx], (1.0 - 0.5 * d) / (0.5 * cfg.max_steps), 0.0)
        r = np.where(goal, 1.0, shaped)
        d_min[idx] = np.minimum(d_min[idx], d)
        returns[idx] += r
        disc[idx] += gamma ** t * r
        lengths[idx] += 1
        success[idx] |= goal
        alive[idx[goal]] = False
    if record:
        states = [np.array(s).reshape(-1, 6) for s in states]
        actions = [np.array(a).reshape(-1, 2) for a in actions]
    return BatchRollout(returns, disc, success, lengths, states, actions)


def random_pose(rng):
    """Joint angles drawn uniformly from [0, 2*pi)^2."""
    return tuple(float(v) for v in rng.uniform(0.0, 2 * np.pi, size=2))


def subgroup_contexts(k, pose=DEFAULT_POSE, base_angle=0.0):
    """The ``k`` contexts whose shoulders sit at the C_k angles around ``base_angle``."""
    return [ReacherContext(float(np.mod(base_angle + 2 * np.pi * j / k, 2 * np.pi)), tuple(pose))
            for j in range(k)]
