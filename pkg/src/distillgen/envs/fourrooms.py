"""Four Rooms grid world with three actions and a sparse goal reward.

Directions follow the Minigrid convention: 0 = east, 1 = south,
2 = west, 3 = north.  Actions: 0 = turn left, 1 = turn right,
2 = move forward.
"""

from collections import deque
from dataclasses import dataclass

import numpy as np

from ..errors import ConfigError
from ..seeding import rng_for
from .common import StepResult

LEFT, RIGHT, FORWARD = 0, 1, 2
N_ACTIONS = 3
DIR_VEC = ((1, 0), (0, 1), (-1, 0), (0, -1))


@dataclass(frozen=True)
class FourRoomsContext:
    walls: tuple          # rows of '0'/'1' characters, '1' = wall
    start: tuple          # (col, row, dir)
    goal: tuple           # (col, row)

    @property
    def size(self):
        return len(self.walls)

    def wall_array(self):
        return np.array([[ch == "1" for ch in row] for row in self.walls], dtype=bool)

    def is_wall(self, col, row):
        return self.walls[row][col] == "1"

    def to_dict(self):
        return {"walls": list(self.walls), "start": list(self.start), "goal": list(self.goal)}

    @classmethod
    def from_dict(cls, d):
        return cls(tuple(d["walls"]), tuple(int(v) for v in d["start"]), tuple(int(v) for v in d["goal"]))


@dataclass(frozen=True)
class GridState:
    col: int
    row: int
    dir: int
    t: int = 0


def four_rooms_walls(size, doors):
    """Wall bitmap for a ``size`` x ``size`` grid with one doorway per internal wall segment.

    ``doors`` gives the doorway offset (0-based, within the segment) for
    the top, bottom, left and right segments.
    """
    mid = size // 2
    w = np.zeros((size, size), dtype=bool)
    w[0, :] = w[-1, :] = w[:, 0] = w[:, -1] = True
    w[mid, :] = True
    w[:, mid] = True
    top, bottom, left, right = doors
    w[1 + top, mid] = False
    w[mid + 1 + bottom, mid] = False
    w[mid, 1 + left] = False
    w[mid, mid + 1 + right] = False
    return tuple("".join("1" if v else "0" for v in row) for row in w)


def forward_cell(col, row, d):
    dc, dr = DIR_VEC[d]
    return col + dc, row + dr


def fourrooms_step(state, ctx, action, max_steps=200):
    col, row, d = state.col, state.row, state.dir
    if action == LEFT:
        d = (d - 1) % 4
    elif action == RIGHT:
        d = (d + 1) % 4
    elif action == FORWARD:
        nc, nr = forward_cell(col, row, d)
        if not ctx.is_wall(nc, nr):
            col, row = nc, nr
    else:
        raise ValueError(f"invalid action {action!r}")
    t = state.t + 1
    at_goal = (col, row) == tuple(ctx.goal)
    nxt = GridState(col, row, d, t)
    return StepResult(nxt, 1.0 if at_goal else 0.0, at_goal, (not at_goal) and t >= max_steps)


def bfs_cells(ctx):
    """Shortest move-count distance from the start cell to every open cell (ignoring turns)."""
    size = ctx.size
    dist = {}
    start = (ctx.start[0], ctx.start[1])
    dist[start] = 0
    q = deque([start])
    while q:
        c, r = q.popleft()
        for dc, dr in DIR_VEC:
            nc, nr = c + dc, r + dr
            if 0 <= nc < size and 0 <= nr < size and not ctx.is_wall(nc, nr) and (nc, nr) not in dist:
                dist[(nc, nr)] = dist[(c, r)] + 1
                q.append((nc, nr))
    return dist


def solvable(ctx):
    return tuple(ctx.goal) in bfs_cells(ctx)


def _sample_context(rng, size):
    seg = size // 2 - 1
    doors = tuple(int(v) for v in rng.integers(0, seg, size=4))
    walls = four_rooms_walls(size, doors)
    open_cells = [(c, r) for r in range(size) for c in range(size) if walls[r][c] == "0"]
    i, j = rng.choice(len(open_cells), size=2, replace=False)
    start = (*open_cells[i], int(rng.integers(0, 4)))
    return FourRoomsContext(walls, start, open_cells[j])


def fourrooms_generate(seed, n_train, n_val, n_test, size=13, max_attempts=None):
    """Three disjoint lists of solvable contexts, deterministic in ``seed``."""
    counts = (n_train, n_val, n_test)
    if any(int(c) < 1 for c in counts):
        raise ConfigError(f"context counts must be >= 1, got {counts}")
    if size < 9 or size % 2 == 0:
        raise ConfigError(f"grid size must be odd and >= 9, got {size}")
    total = sum(counts)
    max_attempts = max_attempts or 50 * total + 1000
    rng = rng_for(seed, 0x4652)
    seen = set()
    out = []
    attempts = 0
    while len(out) < total:
        attempts += 1
        if attempts > max_attempts:
            raise ConfigError(f"could not draw {total} distinct solvable contexts on a {size}x{size} grid")
        ctx = _sample_context(rng, size)
        if ctx in seen or not solvable(ctx):
            continue
        seen.add(ctx)
        out.append(ctx)
    return out[:n_train], out[n_train:n_train + n_val], out[n_train + n_val:]


class FourRoomsEnv:
    name = "fourrooms"
    n_actions = N_ACTIONS

    def __init__(self, size=13, max_steps=200, encoding="egocentric"):
        if encoding not in ENCODINGS:
            raise ConfigError(f"unknown grid encoding {encoding!r}; expected one of {sorted(ENCODINGS)}")
        self.size = size
        self.max_steps = max_steps
        self.encoding = encoding
        self.obs_dim = obs_dim(encoding, size)

    def reset(self, ctx, rng=None):
        c, r, d = ctx.start
        return GridState(c, r, d, 0)

    def step(self, state, ctx, action):
        return fourrooms_step(state, ctx, int(action), self.max_steps)

    def observe(self, state, ctx):
        return ENCODINGS[self.encoding](ctx, [state.col], [state.row], [state.dir])[0]

    def features(self, ctx, cols, rows, dirs):
        return ENCODINGS[self.encoding](ctx, cols, rows, dirs)


def encode(ctx, cols, rows, dirs):
    """One-hot features: wall bitmap, goal cell, agent cell, agent direction."""
    size = ctx.size
    cols = np.asarray(cols, dtype=np.int64)
    n = cols.size
    cells = size * size
    x = np.zeros((n, 3 * cells + 4))
    x[:, :cells] = ctx.wall_array().ravel()
    x[:, cells + ctx.goal[1] * size + ctx.goal[0]] = 1.0
    x[np.arange(n), 2 * cells + np.asarray(rows) * size + cols] = 1.0
    x[np.arange(n), 3 * cells + np.asarray(dirs)] = 1.0
    return x


def _agent_to_world(u, v, d):
    """World (col, row) offsets of agent-frame offsets (u right, v back) for heading ``d``."""
    if d == 3:        # facing north: agent frame equals world frame
        return u, v
    if d == 0:        # facing east
        return -v, u
    if d == 1:        # facing south
        return -u, -v
    return v, -u      # facing west


def encode_egocentric(ctx, cols, rows, dirs):
    """Agent-centred, heading-aligned floor and goal maps.

    The window spans ``2 * size - 1`` cells per side, so the whole grid is
    always in view.  Channel 0 marks open floor (walls and off-grid cells
    read 0), which keeps the vectors sparse.
    """
    size = ctx.size
    span = 2 * size - 1
    cols = np.asarray(cols, dtype=np.int64).reshape(-1)
    rows = np.asarray(rows, dtype=np.int64).reshape(-1)
    dirs = np.asarray(dirs, dtype=np.int64).reshape(-1)
    walls = ctx.wall_array()
    off = np.arange(span) - (size - 1)
    v, u = np.meshgrid(off, off, indexing="ij")
    x = np.zeros((cols.size, 2, span, span))
    for d in range(4):
        sel = np.flatnonzero(dirs == d)
        if not sel.size:
            continue
        wc, wr = _agent_to_world(u, v, d)
        c = cols[sel, None, None] + wc[None]
        r = rows[sel, None, None] + wr[None]
        inside = (c >= 0) & (c < size) & (r >= 0) & (r < size)
        cc = np.clip(c, 0, size - 1)
        rr = np.clip(r, 0, size - 1)
        x[sel, 0] = inside & ~walls[rr, cc]
        x[sel, 1] = inside & (cc == ctx.goal[0]) & (rr == ctx.goal[1])
    return x.reshape(cols.size, -1)


ENCODINGS = {"global": encode, "egocentric": encode_egocentric}


def obs_dim(encoding, size):
    if encoding == "global":
        return 3 * size * size + 4
    return 2 * (2 * size - 1) ** 2
