"""Teacher and exploration policies.

Every policy exposes ``action(env, state, ctx, rng)``.  Reacher policies
also provide ``act_batch(coords, vel, t)`` for lock-step rollouts, and
discrete policies provide ``probs(state, ctx)``.
"""

import numpy as np

from .envs import fourrooms as fr
from .envs.reacher import ReacherConfig, coords_joints
from .errors import ContractError


def _wrap(a):
    return (a + np.pi) % (2 * np.pi) - np.pi


class HandcraftedReacher:
    """Open-loop bang-bang torques, optimal for the default starting pose."""

    kind = "handcrafted_reacher"
    switch_step = 12

    def act_batch(self, coords, vel, t):
        t = np.asarray(t)
        out = np.empty((t.size, 2))
        out[:, 0] = np.where(t < self.switch_step, -2.0, 2.0)
        out[:, 1] = 2.0
        return out

    def action(self, env, state, ctx=None, rng=None):
        return self.act_batch(None, None, np.array([state.t]))[0]


def handcrafted_reacher(s, t):
    return HandcraftedReacher().act_batch(None, None, np.array([t]))[0]


class IKReacher:
    """Proportional control towards the inverse-kinematics joint angles that put the hand on the target.

    All quantities are joint-frame angles, so the torques are unchanged
    when the whole context is rotated.
    """

    kind = "ik_reacher"

    def __init__(self, cfg=None, kp=4.0, kd=0.0):
        self.cfg = cfg or ReacherConfig()
        self.kp = kp
        self.kd = kd

    def target_joints(self, q2):
        cfg = self.cfg
        l1, l2, dist = cfg.link1, cfg.link2, cfg.circle_radius
        c2 = np.clip((dist ** 2 - l1 ** 2 - l2 ** 2) / (2 * l1 * l2), -1.0, 1.0)
        # keep the elbow on the side it currently bends towards
        sign = np.where(_wrap(q2) < 0, -1.0, 1.0)
        q2_star = sign * np.arccos(c2)
        q1_star = -np.arctan2(l2 * np.sin(q2_star), l1 + l2 * np.cos(q2_star))
        return q1_star, q2_star

    def act_batch(self, coords, vel, t=None):
        coords = np.atleast_2d(coords)
        vel = np.atleast_2d(vel)
        _, q1, q2 = coords_joints(coords)
        q1s, q2s = self.target_joints(q2)
        err = np.stack([_wrap(q1s - q1), _wrap(q2s - q2)], axis=-1)
        tau = self.kp * err - self.kd * vel
        return np.clip(tau, -self.cfg.torque_limit, self.cfg.torque_limit)

    def action(self, env, state, ctx=None, rng=None):
        return self.act_batch(state.coords[None], state.vel[None])[0]


def ik_reacher(s, vel, cfg=None):
    return IKReacher(cfg).act_batch(np.asarray(s)[None], np.asarray(vel)[None])[0]


class TabularPolicy:
    """Action probabilities for every (col, row, dir) of one Four Rooms context."""

    kind = "grid_planner"

    def __init__(self, ctx, dist, table, temperature):
        self.ctx = ctx
        self.dist = dist          # (size, size, 4) steps-to-goal
        self.table = table        # (size, size, 4, 3) action probabilities
        self.temperature = temperature

    def probs(self, state, ctx=None):
        return self.table[state.row, state.col, state.dir]

    def action(self, env, state, ctx=None, rng=None):
        p = self.probs(state)
        if self.temperature == 0:
            return int(np.argmax(p))
        return int(rng.choice(fr.N_ACTIONS, p=p))


def _successors(ctx):
    """next-state indices (row, col, dir) for every state and action."""
    size = ctx.size
    walls = ctx.wall_array()
    rows, cols, dirs = np.meshgrid(np.arange(size), np.arange(size), np.arange(4), indexing="ij")
    nxt = np.empty((size, size, 4, 3, 3), dtype=np.int64)
    nxt[..., fr.LEFT, :] = np.stack([rows, cols, (dirs - 1) % 4], axis=-1)
    nxt[..., fr.RIGHT, :] = np.stack([rows, cols, (dirs + 1) % 4], axis=-1)
    dc = np.array([v[0] for v in fr.DIR_VEC])[dirs]
    dr = np.array([v[1] for v in fr.DIR_VEC])[dirs]
    nr = np.clip(rows + dr, 0, size - 1)
    nc = np.clip(cols + dc, 0, size - 1)
    blocked = walls[nr, nc]
    nxt[..., fr.FORWARD, :] = np.stack([np.where(blocked, rows, nr), np.where(blocked, cols, nc), dirs],
                                       axis=-1)
    return nxt


def grid_distances(ctx):
    """Minimal number of actions to reach the goal from every (row, col, dir)."""
    size = ctx.size
    nxt = _successors(ctx)
    dist = np.full((size, size, 4), np.inf)
    gc, gr = ctx.goal
    dist[gr, gc, :] = 0.0
    walls = ctx.wall_array()
    while True:
        after = dist[nxt[..., 0], nxt[..., 1], nxt[..., 2]]
        new = np.minimum(dist, 1.0 + after.min(axis=-1))
        new[gr, gc, :] = 0.0
        new[walls] = np.inf
        if np.array_equal(new, dist):
            return dist, nxt
        dist = new


def grid_planner(ctx, temperature=0.5):
    """Softmax over negative steps-to-goal after each action; temperature 0 is greedy."""
    dist, nxt = grid_distances(ctx)
    start = ctx.start
    if not np.isfinite(dist[start[1], start[0], start[2]]):
        raise ContractError("goal unreachable from the start state")
    after = dist[nxt[..., 0], nxt[..., 1], nxt[..., 2]]
    after = np.where(np.isfinite(after), after, 1e6)
    if temperature == 0:
        best = np.argmin(after, axis=-1)
        table = np.eye(fr.N_ACTIONS)[best]
    else:
        z = -(after - after.min(axis=-1, keepdims=True)) / temperature
        e = np.exp(z)
        table = e / e.sum(axis=-1, keepdims=True)
    return TabularPolicy(ctx, dist, table, temperature)


class GridPlanner:
    """Context-agnostic wrapper that builds (and caches) one tabular planner per context."""

    kind = "grid_planner"

    def __init__(self, temperature=0.5):
        if temperature < 0:
            raise ContractError("temperature must be >= 0")
        self.temperature = temperature
        self._cache = {}

    def table_for(self, ctx):
        pol = self._cache.get(ctx)
        if pol is None:
            pol = self._cache[ctx] = grid_planner(ctx, self.temperature)
        return pol

    def probs(self, state, ctx):
        return self.table_for(ctx).probs(state)

    def action(self, env, state, ctx, rng=None):
        return self.table_for(ctx).action(env, state, ctx, rng)


class PureExplorer:
    """Reward-agnostic walker: uniform actions on the grid, uniform torques on the reacher."""

    kind = "pure_explorer"

    def __init__(self, env_name="fourrooms", torque_limit=2.0):
        self.env_name = env_name
        self.torque_limit = torque_limit

    def probs(self, state=None, ctx=None):
        return np.full(fr.N_ACTIONS, 1.0 / fr.N_ACTIONS)

    def action(self, env, state, ctx, rng):
        if self.env_name == "reacher":
            return rng.uniform(-self.torque_limit, self.torque_limit, size=2)
        return int(rng.integers(0, fr.N_ACTIONS))


def pure_explorer(rng=None, env_name="fourrooms"):
    return PureExplorer(env_name)
