"""Distillation datasets: construction from teacher/explorer rollouts and JSON-lines persistence.

Reacher samples store the 6-D observation directly.  Four Rooms samples
store the compact row ``(context index, col, row, dir)``; the context list
lives in the dataset metadata and :meth:`Dataset.features` expands rows
into the one-hot network input.
"""

import json
import os
import tempfile

import numpy as np

from .envs import fourrooms as fr
from .envs.reacher import ReacherConfig, ReacherContext, random_pose, rollout_batch
from .errors import ConfigError, ContractError
from .seeding import rng_for

DATASET_KINDS = ("training_contexts", "plus_c4", "plus_ck", "plus_random", "teacher", "explore_go", "mixed")
TARGET_KINDS = ("vector", "prob", "index")
TEACHER, EXPLORER = 0, 1


class DatasetParseError(ValueError):
    """A dataset file could not be parsed; ``line`` is 1-based."""

    def __init__(self, line, msg):
        super().__init__(f"line {line}: {msg}")
        self.line = line


class Dataset:
    """Samples ``(state, target, source)`` stored as parallel arrays.

    ``alt`` optionally holds the same samples under other target kinds
    (for grid data, teacher probabilities and taken actions share states);
    :meth:`retarget` switches between them.
    """

    def __init__(self, states, targets, sources, kind, env, target_kind, meta=None, alt=None):
        self.states = np.asarray(states, dtype=np.float64)
        n = len(self.states)
        if target_kind not in TARGET_KINDS:
            raise ContractError(f"unknown target kind {target_kind!r}")
        if kind not in DATASET_KINDS:
            raise ContractError(f"unknown dataset kind {kind!r}")
        dtype = np.int64 if target_kind == "index" else np.float64
        self.targets = np.asarray(targets, dtype=dtype)
        self.sources = np.asarray(sources, dtype=np.int64).reshape(n)
        if len(self.targets) != n:
            raise ContractError(f"{n} states but {len(self.targets)} targets")
        if target_kind == "prob" and n:
            if np.any(self.targets < 0) or not np.allclose(self.targets.sum(axis=1), 1.0, atol=1e-9):
                raise ContractError("probability targets must be non-negative and sum to 1")
        self.kind = kind
        self.env = env
        self.target_kind = target_kind
        self.meta = dict(meta or {})
        self.meta["size"] = n
        self.alt = dict(alt or {})

    def __len__(self):
        return len(self.states)

    def retarget(self, target_kind):
        """The same samples with another stored target kind."""
        if target_kind == self.target_kind:
            return self
        if target_kind not in self.alt:
            raise ContractError(f"dataset has no {target_kind!r} targets")
        alt = dict(self.alt)
        alt[self.target_kind] = self.targets
        del alt[target_kind]
        return Dataset(self.states, self.alt[target_kind], self.sources, self.kind, self.env,
                       target_kind, self.meta, alt)

    def contexts(self):
        if self.env != "fourrooms":
            raise ContractError("only grid datasets carry contexts")
        return [fr.FourRoomsContext.from_dict(c) for c in self.meta["contexts"]]

    def features(self, encoding=None):
        """Network inputs ``(n, obs_dim)``; grid data uses ``encoding`` or the one recorded at build time."""
        if self.env == "reacher":
            return self.states
        return grid_features(self.states, self.contexts(), encoding or self.meta.get("encoding", "egocentric"))


def grid_features(rows, contexts, encoding="egocentric"):
    """Network inputs for ``(context index, col, row, dir)`` rows."""
    rows = np.asarray(rows, dtype=np.int64).reshape(-1, 4)
    size = contexts[0].size if contexts else 13
    encode = fr.ENCODINGS[encoding]
    out = np.zeros((len(rows), fr.obs_dim(encoding, size)))
    for ci in np.unique(rows[:, 0]):
        sel = np.flatnonzero(rows[:, 0] == ci)
        out[sel] = encode(contexts[ci], rows[sel, 1], rows[sel, 2], rows[sel, 3])
    return out


def _env_name(env):
    return getattr(env, "name", env)


def _check_pair(env, teacher):
    name = _env_name(env)
    if name == "reacher" and not hasattr(teacher, "act_batch"):
        raise ContractError(f"teacher {getattr(teacher, 'kind', teacher)!r} cannot drive the reacher")
    if name == "fourrooms" and not hasattr(teacher, "probs"):
        raise ContractError(f"teacher {getattr(teacher, 'kind', teacher)!r} has no action probabilities")
    if name not in ("reacher", "fourrooms"):
        raise ContractError(f"unsupported env {name!r}")


def _check_size(target_size):
    if target_size is not None and int(target_size) < 1:
        raise ConfigError(f"target_size must be >= 1, got {target_size}")


def _teacher_meta(teacher):
    return {"teacher": getattr(teacher, "kind", type(teacher).__name__),
            "temperature": getattr(teacher, "temperature", None)}


# ---------------------------------------------------------------- reacher

def _reacher_trajectories(env, teacher, starts):
    cfg = getattr(env, "cfg", None) or ReacherConfig()
    roll = rollout_batch(teacher, starts, cfg, record=True)
    return roll.states, roll.actions


def _round_robin(trajs, target_size):
    """Concatenate whole trajectories in round-robin order; truncate to ``target_size``."""
    states, targets = trajs
    if target_size is None:
        return np.concatenate(states), np.concatenate(targets)
    if sum(len(s) for s in states) == 0:
        raise ContractError("teacher produced only empty trajectories")
    out_s, out_t, n, i = [], [], 0, 0
    while n < target_size:
        s, t = states[i % len(states)], targets[i % len(states)]
        out_s.append(s)
        out_t.append(t)
        n += len(s)
        i += 1
    return np.concatenate(out_s)[:target_size], np.concatenate(out_t)[:target_size]


def _reacher_dataset(env, teacher, starts, target_size, kind, meta):
    s, a = _round_robin(_reacher_trajectories(env, teacher, starts), target_size)
    meta = dict(meta, starts=[c.to_dict() for c in starts], **_teacher_meta(teacher))
    return Dataset(s, a, np.zeros(len(s)), kind, "reacher", "vector", meta)


def _ck_starts(contexts, k):
    """Base contexts first, then each pose rotated to the other C_k shoulder locations."""
    starts = list(contexts)
    for j in range(1, k):
        starts += [c.rotated(2 * np.pi * j / k) for c in contexts]
    return starts


# ---------------------------------------------------------------- grid

def _grid_rollout(env, ctx, ci, teacher, explorer, n_explore, rng, store_explorer=False):
    """One episode: ``n_explore`` explorer steps, then the teacher until the episode ends.

    Returns the stored rows, teacher probabilities, taken actions and
    sources, plus the number of exploration steps actually taken.
    """
    state = env.reset(ctx)
    rows, probs, taken, src = [], [], [], []
    done = False
    steps = 0
    for _ in range(n_explore):
        a = explorer.action(env, state, ctx, rng)
        if store_explorer:
            rows.append((ci, state.col, state.row, state.dir))
            probs.append(teacher.probs(state, ctx))
            taken.append(a)
            src.append(EXPLORER)
        res = env.step(state, ctx, a)
        state = res.state
        steps += 1
        if res.done:
            done = True
            break
    while not done and not store_explorer:
        a = teacher.action(env, state, ctx, rng)
        rows.append((ci, state.col, state.row, state.dir))
        probs.append(teacher.probs(state, ctx))
        taken.append(a)
        src.append(TEACHER)
        res = env.step(state, ctx, a)
        state = res.state
        done = res.done
    return rows, probs, taken, src, steps


def _grid_collect(env, teacher, contexts, target_size, seed, explorer=None, K=1, explorer_only=False,
                  horizon=None):
    rows, probs, taken, src, prefixes = [], [], [], [], []
    episode = 0
    while len(rows) < target_size:
        ci = episode % len(contexts)
        rng = rng_for(seed, ci, episode)
        if explorer_only:
            n_explore = horizon or env.max_steps
        else:
            n_explore = int(rng.integers(0, K)) if K > 1 else 0
        r, p, a, s, steps = _grid_rollout(env, contexts[ci], ci, teacher, explorer, n_explore, rng,
                                          store_explorer=explorer_only)
        rows += r
        probs += p
        taken += a
        src += s
        prefixes.append(steps)
        episode += 1
    cut = slice(0, target_size)
    return (np.array(rows[cut], dtype=np.float64).reshape(-1, 4), np.array(probs[cut]).reshape(-1, 3),
            np.array(taken[cut], dtype=np.int64), np.array(src[cut], dtype=np.int64), prefixes)


def _grid_dataset(rows, probs, taken, src, kind, targets, meta):
    if targets not in ("distill", "bc"):
        raise ConfigError(f"grid targets must be 'distill' or 'bc', got {targets!r}")
    if targets == "distill":
        return Dataset(rows, probs, src, kind, "fourrooms", "prob", meta, alt={"index": taken})
    return Dataset(rows, taken, src, kind, "fourrooms", "index", meta, alt={"prob": probs})


def _grid_meta(env, contexts, seed, teacher, **extra):
    return dict(contexts=[c.to_dict() for c in contexts], seed=int(seed), encoding=getattr(env, "encoding", "egocentric"),
                max_steps=int(getattr(env, "max_steps", 200)), **_teacher_meta(teacher), **extra)


# ---------------------------------------------------------------- builders

def build_training_contexts(env, teacher, contexts, target_size=None, seed=0, targets="distill"):
    """Teacher trajectories from ``contexts``, round-robin, truncated to ``target_size``.

    For the reacher ``target_size=None`` keeps exactly one trajectory per
    context.  Grid datasets need a size; ``targets`` picks teacher
    probabilities (``'distill'``) or taken actions (``'bc'``).
    """
    _check_pair(env, teacher)
    _check_size(target_size)
    if not contexts:
        raise ContractError("no training contexts")
    if _env_name(env) == "reacher":
        return _reacher_dataset(env, teacher, list(contexts), target_size, "training_contexts",
                                {"target_size": target_size})
    if target_size is None:
        raise ConfigError("grid datasets need a target_size")
    rows, probs, taken, src, _ = _grid_collect(env, teacher, contexts, int(target_size), seed)
    meta = _grid_meta(env, contexts, seed, teacher, target_size=int(target_size), targets=targets)
    return _grid_dataset(rows, probs, taken, src, "teacher", targets, meta)


def build_plus_ck(env, teacher, contexts, k, target_size=None):
    """Teacher re-rolled from every base pose at every C_k shoulder location."""
    if _env_name(env) != "reacher":
        raise ContractError("plus_ck datasets need the reacher")
    _check_pair(env, teacher)
    _check_size(target_size)
    k = int(k)
    if k < 1:
        raise ConfigError("k must be >= 1")
    if k == 1:
        return build_training_contexts(env, teacher, contexts, target_size)
    kind = "plus_c4" if k == 4 else "plus_ck"
    return _reacher_dataset(env, teacher, _ck_starts(list(contexts), k), target_size, kind,
                            {"k": k, "target_size": target_size})


def build_plus_random(env, teacher, contexts, n_extra=None, target_size=None, rng=None, k=4):
    """Like :func:`build_plus_ck`, but the extra starts get fresh uniform poses.

    The extra starts sit at the same shoulder locations as the plus_ck
    extras (``n_extra`` defaults to ``len(contexts) * (k - 1)``); pass the
    plus_ck dataset size as ``target_size`` for a volume-matched comparison.
    """
    if _env_name(env) != "reacher":
        raise ContractError("plus_random datasets need the reacher")
    _check_pair(env, teacher)
    _check_size(target_size)
    rng = rng if rng is not None else np.random.default_rng(0)
    base = list(contexts)
    shoulders = [c.shoulder_angle for c in _ck_starts(base, k)[len(base):]]
    n_extra = len(shoulders) if n_extra is None else int(n_extra)
    extra = [ReacherContext(shoulders[i % len(shoulders)], random_pose(rng)) for i in range(n_extra)]
    return _reacher_dataset(env, teacher, base + extra, target_size, "plus_random",
                            {"k": k, "n_extra": n_extra, "target_size": target_size})


def build_explore_go(env, teacher, explorer, K, target_size, contexts, seed=0, targets="distill"):
    """Per episode: ``k ~ U{0..K-1}`` explorer steps (not stored), then the teacher.

    Metadata records the number of exploration steps per episode and
    their total (``extra_env_steps``).
    """
    if int(K) < 1:
        raise ConfigError(f"K must be >= 1, got {K}")
    _check_pair(env, teacher)
    _check_size(target_size)
    if _env_name(env) != "fourrooms":
        raise ContractError("explore_go datasets are built on the grid")
    rows, probs, taken, src, prefixes = _grid_collect(env, teacher, contexts, int(target_size), seed,
                                                      explorer=explorer, K=int(K))
    meta = _grid_meta(env, contexts, seed, teacher, K=int(K), target_size=int(target_size), targets=targets,
                      explore_steps=prefixes, extra_env_steps=int(sum(prefixes)),
                      mean_prefix=float(np.mean(prefixes)))
    return _grid_dataset(rows, probs, taken, src, "explore_go", targets, meta)


def build_mixed(env, teacher, explorer, target_size, contexts, seed=0, targets="distill"):
    """Half teacher trajectories, half explorer rollouts.

    Distillation targets are teacher probabilities on every state; BC
    targets are the actions actually taken, so they differ on the
    explorer half.
    """
    _check_pair(env, teacher)
    _check_size(target_size)
    if int(target_size) % 2:
        raise ConfigError(f"mixed datasets need an even size, got {target_size}")
    if _env_name(env) != "fourrooms":
        raise ContractError("mixed datasets are built on the grid")
    half = int(target_size) // 2
    t_rows, t_probs, t_taken, t_src, _ = _grid_collect(env, teacher, contexts, half, seed)
    e_rows, e_probs, e_taken, e_src, _ = _grid_collect(env, teacher, contexts, half, seed + 1,
                                                       explorer=explorer, explorer_only=True)
    meta = _grid_meta(env, contexts, seed, teacher, target_size=int(target_size), targets=targets)
    return _grid_dataset(np.concatenate([t_rows, e_rows]), np.concatenate([t_probs, e_probs]),
                         np.concatenate([t_taken, e_taken]), np.concatenate([t_src, e_src]),
                         "mixed", targets, meta)


def unique_states(data):
    """Number of distinct stored states."""
    if len(data) == 0:
        return 0
    return len(np.unique(data.states, axis=0))


# ---------------------------------------------------------------- persistence

def _jsonable(v):
    if isinstance(v, np.ndarray):
        return v.tolist()
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, (np.floating,)):
        return float(v)
    raise TypeError(f"cannot serialise {type(v).__name__}")


def atomic_write_text(path, text):
    """Write ``text`` to ``path`` through a temporary file and a rename."""
    path = os.fspath(path)
    d = os.path.dirname(os.path.abspath(path))
    os.makedirs(d, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def dumps(data):
    header = {"kind": data.kind, "env": data.env, "target_kind": data.target_kind, "meta": data.meta}
    lines = [json.dumps(header, default=_jsonable, sort_keys=True)]
    index = data.target_kind == "index"
    for s, t, src in zip(data.states, data.targets, data.sources):
        t_out = int(t) if index else [float(v) for v in np.atleast_1d(t)]
        lines.append(json.dumps({"s": [float(v) for v in s], "t": t_out, "src": int(src)}))
    return "\n".join(lines) + "\n"


def save(data, path):
    atomic_write_text(path, dumps(data))


def load(path):
    with open(path) as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise DatasetParseError(1, "missing metadata line")
    try:
        header = json.loads(lines[0])
        kind, env, target_kind, meta = header["kind"], header["env"], header["target_kind"], header["meta"]
    except (ValueError, KeyError, TypeError) as exc:
        raise DatasetParseError(1, f"bad metadata: {exc}") from None
    states, targets, sources = [], [], []
    for no, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
            s = [float(v) for v in rec["s"]]
            t = rec["t"]
            if target_kind == "index":
                if not isinstance(t, int):
                    raise ValueError("index target must be an integer")
            else:
                t = [float(v) for v in t]
            src = int(rec["src"])
            if src not in (TEACHER, EXPLORER):
                raise ValueError(f"src must be 0 or 1, got {src}")
        except (ValueError, KeyError, TypeError) as exc:
            raise DatasetParseError(no, str(exc)) from None
        states.append(s)
        targets.append(t)
        sources.append(src)
    if len(states) != meta.get("size", len(states)):
        raise DatasetParseError(len(lines), f"expected {meta['size']} samples, found {len(states)}")
    width = {"reacher": 6, "fourrooms": 4}.get(env, 0)
    st = np.array(states, dtype=np.float64).reshape(len(states), -1 if states else width)
    if target_kind == "index":
        tg = np.array(targets, dtype=np.int64)
    else:
        tdim = 2 if target_kind == "vector" and env == "reacher" else 3
        tg = np.array(targets, dtype=np.float64).reshape(len(targets), -1 if targets else tdim)
    return Dataset(st, tg, np.array(sources, dtype=np.int64), kind, env, target_kind, meta)
