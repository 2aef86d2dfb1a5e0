"""Ensembles of distilled students, deterministic evaluation and seed aggregation."""

import csv
import io
from dataclasses import dataclass

import numpy as np

from . import nn
from .distill import train_ensemble
from .envs import fourrooms as fr
from .envs.reacher import ReacherConfig, rollout_batch
from .errors import ContractError
from .losses import softmax

SEMANTICS = ("action_vector", "probability_vector")


class Ensemble:
    """``N`` students averaged at prediction time."""

    def __init__(self, members, semantics="action_vector"):
        if semantics not in SEMANTICS:
            raise ContractError(f"semantics must be one of {SEMANTICS}")
        if isinstance(members, nn.ParamStack):
            stack = members
        else:
            stack = nn.ParamStack.from_params(members)
        if len(stack) < 1:
            raise ContractError("an ensemble needs at least one member")
        self.stack = stack
        self.semantics = semantics

    @property
    def arch(self):
        return self.stack.arch

    @property
    def size(self):
        return len(self.stack)

    def __len__(self):
        return len(self.stack)

    def subset(self, n):
        return Ensemble(self.stack.subset(n), self.semantics)

    def member(self, j):
        """The ``j``-th student alone, as a one-member ensemble."""
        return Ensemble(self.stack.select([j]), self.semantics)

    def member_outputs(self, x):
        """Per-member outputs ``(N, B, d)``: action vectors or probability vectors."""
        out = self.stack.forward(np.atleast_2d(x))
        return softmax(out) if self.semantics == "probability_vector" else out

    def mean_output(self, x):
        return self.member_outputs(x).mean(axis=0)


def build_ensemble(data, arch, loss, cfg, seeds, features=None):
    semantics = "probability_vector" if loss.softmax_head else "action_vector"
    res = train_ensemble(data, arch, loss, cfg, seeds, features=features)
    return Ensemble(res.stack, semantics)


def predict(e, s):
    """Averaged action: mean vector, or argmax of the mean probabilities (ties go to the lowest index)."""
    s = np.asarray(s, dtype=np.float64)
    single = s.ndim == 1
    mean = e.mean_output(s)
    out = np.argmax(mean, axis=-1) if e.semantics == "probability_vector" else mean
    return out[0] if single else out


class EnsemblePolicy:
    """Adapts an :class:`Ensemble` to the rollout interfaces of both environments."""

    def __init__(self, ensemble, deterministic=True):
        self.ensemble = ensemble
        self.deterministic = deterministic
        self.kind = f"ensemble[{ensemble.size}]"

    def act_batch(self, coords, vel=None, t=None):
        return self.ensemble.mean_output(coords)

    def grid_actions(self, features, rng=None):
        p = self.ensemble.mean_output(features)
        if self.deterministic:
            return np.argmax(p, axis=-1)
        u = rng.random(len(p))[:, None]
        return np.minimum((np.cumsum(p, axis=-1) < u).sum(axis=-1), fr.N_ACTIONS - 1)

    def probs(self, state, ctx, env=None):
        env = env or fr.FourRoomsEnv(ctx.size)
        return self.ensemble.mean_output(env.observe(state, ctx)[None])[0]

    def action(self, env, state, ctx, rng=None):
        if env.name == "reacher":
            return self.act_batch(state.coords[None])[0]
        return int(self.grid_actions(env.observe(state, ctx)[None], rng)[0])


@dataclass(frozen=True, eq=False)
class EvalReport:
    returns: np.ndarray              # (contexts,) mean undiscounted return per context
    discounted: np.ndarray           # (contexts,) mean discounted return per context
    success: np.ndarray              # (contexts,) success rate per context

    @property
    def mean(self):
        return float(np.mean(self.returns))

    @property
    def std(self):
        return float(np.std(self.returns))

    @property
    def disc_mean(self):
        return float(np.mean(self.discounted))

    @property
    def disc_std(self):
        return float(np.std(self.discounted))

    def value(self, discounted=False):
        return self.disc_mean if discounted else self.mean


def _grid_rollouts(policy, env, contexts, rng, gamma):
    """Lock-step grid episodes, one per context; returns (returns, discounted, success)."""
    n = len(contexts)
    states = [env.reset(c) for c in contexts]
    alive = np.ones(n, dtype=bool)
    ret = np.zeros(n)
    disc = np.zeros(n)
    batched = hasattr(policy, "grid_actions")
    for t in range(env.max_steps):
        idx = np.flatnonzero(alive)
        if idx.size == 0:
            break
        if batched:
            feats = np.concatenate([env.features(contexts[i], [states[i].col], [states[i].row], [states[i].dir])
                                    for i in idx])
            acts = policy.grid_actions(feats, rng)
        else:
            acts = [policy.action(env, states[i], contexts[i], rng) for i in idx]
        for i, a in zip(idx, acts):
            res = env.step(states[i], contexts[i], int(a))
            states[i] = res.state
            ret[i] += res.reward
            disc[i] += gamma ** t * res.reward
            if res.done:
                alive[i] = False
    return ret, disc, ret > 0


def evaluate(policy, contexts, episodes_per_context=1, gamma=0.99, rng=None, env=None):
    """Mean return per context over ``episodes_per_context`` episodes."""
    contexts = list(contexts)
    if not contexts:
        raise ContractError("no contexts to evaluate on")
    rng = rng if rng is not None else np.random.default_rng(0)
    name = getattr(env, "name", None) or ("fourrooms" if isinstance(contexts[0], fr.FourRoomsContext)
                                          else "reacher")
    rets, discs, succ = [], [], []
    for _ in range(int(episodes_per_context)):
        if name == "reacher":
            cfg = getattr(env, "cfg", None) or ReacherConfig()
            roll = rollout_batch(policy, contexts, cfg, gamma=gamma)
            r, d, s = roll.returns, roll.discounted, roll.success
        else:
            env = env or fr.FourRoomsEnv(contexts[0].size)
            r, d, s = _grid_rollouts(policy, env, contexts, rng, gamma)
        rets.append(r)
        discs.append(d)
        succ.append(s)
    return EvalReport(np.mean(rets, axis=0), np.mean(discs, axis=0), np.mean(succ, axis=0))


@dataclass(frozen=True)
class AggregateRow:
    mean: float
    std: float
    ci95: float
    n: int

    @property
    def interval(self):
        return self.mean - self.ci95, self.mean + self.ci95


def aggregate(values, discounted=False):
    """Mean, sample std and normal-approximation 95% half-width over seeds.

    ``values`` holds one number (or :class:`EvalReport`) per seed.
    """
    vals = np.array([v.value(discounted) if isinstance(v, EvalReport) else float(v) for v in values])
    if len(vals) < 2:
        raise ContractError("aggregation needs at least two seeds")
    std = float(np.std(vals, ddof=1))
    return AggregateRow(float(vals.mean()), std, 1.96 * std / np.sqrt(len(vals)), len(vals))


RESULT_COLUMNS = ("env", "dataset_kind", "loss_kind", "N", "subgroup_k", "split", "mean", "std", "ci95",
                  "seeds", "discounted")


def fmt_float(v):
    return f"{float(v):.17g}"


def results_csv(rows):
    """CSV text for result rows (dicts keyed by :data:`RESULT_COLUMNS`)."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(RESULT_COLUMNS)
    for r in rows:
        w.writerow([fmt_float(r[c]) if isinstance(r[c], float) else r[c] for c in RESULT_COLUMNS])
    return buf.getvalue()


def result_rows(env, dataset_kind, loss_kind, n, k, split, reports):
    """Two result rows (undiscounted and discounted) for per-seed reports."""
    rows = []
    for disc in (False, True):
        agg = aggregate(reports, discounted=disc)
        rows.append({"env": env, "dataset_kind": dataset_kind, "loss_kind": loss_kind, "N": int(n),
                     "subgroup_k": k, "split": split, "mean": agg.mean, "std": agg.std, "ci95": agg.ci95,
                     "seeds": agg.n, "discounted": disc})
    return rows
