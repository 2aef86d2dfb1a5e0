"""A one-dimensional Lipschitz MDP with known constants.

s' = clip(s + 0.5 a, -1, 1) and R(s, a) = 1 - |s| on s, a in [-1, 1].
With the absolute-value metric on states and actions, L_T = L_R = 1.
"""

import numpy as np

from .common import StepResult

L_T = 1.0
L_R = 1.0
HORIZON = 30


def micro_transition(s, a):
    return np.clip(np.asarray(s, dtype=np.float64) + 0.5 * np.clip(a, -1.0, 1.0), -1.0, 1.0)


def micro_reward(s, a=None):
    return 1.0 - np.abs(np.asarray(s, dtype=np.float64))


def micro_mdp_step(s, a, t=0, horizon=HORIZON):
    """Returns a StepResult whose state is ``(s', t + 1)``; never terminates."""
    r = float(micro_reward(s, a))
    return StepResult((float(micro_transition(s, a)), t + 1), r, False, t + 1 >= horizon)


def optimal_action(s):
    """Greedy move towards the origin, which is optimal since R depends on |s| only."""
    return np.clip(-2.0 * np.asarray(s, dtype=np.float64), -1.0, 1.0)


class MicroMDP:
    """Episodic wrapper; a context is the initial state."""

    name = "micro"

    def __init__(self, horizon=HORIZON):
        self.max_steps = horizon

    def reset(self, ctx, rng=None):
        return (float(ctx), 0)

    def step(self, state, ctx, action):
        s, t = state
        return micro_mdp_step(s, float(action), t, self.max_steps)

    def observe(self, state, ctx=None):
        return np.array([state[0]])


def micro_returns(policy_fn, s0, gamma, horizon=HORIZON):
    """Vectorised discounted returns and visited states from initial states ``s0``.

    Returns ``(returns, states)`` with ``states`` of shape ``(horizon, n)``.
    """
    s = np.asarray(s0, dtype=np.float64).copy()
    ret = np.zeros_like(s)
    states = np.empty((horizon,) + s.shape)
    for t in range(horizon):
        states[t] = s
        a = np.clip(policy_fn(s), -1.0, 1.0)
        ret += gamma ** t * micro_reward(s)
        s = micro_transition(s, a)
    return ret, states
