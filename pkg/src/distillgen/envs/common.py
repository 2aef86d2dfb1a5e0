from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class StepResult:
    state: object
    reward: float
    terminated: bool
    truncated: bool

    @property
    def done(self):
        return self.terminated or self.truncated


@dataclass(frozen=True, eq=False)
class Trajectory:
    states: list
    actions: list
    rewards: np.ndarray
    ret: float
    discounted_ret: float
    terminated: bool


def rollout(env, ctx, policy, rng, max_steps=None, gamma=0.99):
    """Roll ``policy`` out in ``env`` for one episode of context ``ctx``.

    ``policy.action(env, state, ctx, rng)`` must return a valid action.
    Both the undiscounted and the ``gamma``-discounted return are kept.
    """
    state = env.reset(ctx)
    limit = env.max_steps if max_steps is None else int(max_steps)
    states, actions, rewards = [], [], []
    terminated = False
    for _ in range(limit):
        a = policy.action(env, state, ctx, rng)
        res = env.step(state, ctx, a)
        states.append(state)
        actions.append(a)
        rewards.append(res.reward)
        state = res.state
        if res.done:
            terminated = res.terminated
            break
    rewards = np.asarray(rewards, dtype=np.float64)
    disc = float(np.sum(rewards * gamma ** np.arange(len(rewards))))
    return Trajectory(states, actions, rewards, float(rewards.sum()), disc, terminated)
