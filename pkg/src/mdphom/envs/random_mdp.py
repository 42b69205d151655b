"""Small random deterministic MDPs and an environment wrapper around any
enumerated model (used by the oracle tests)."""
from __future__ import annotations

import numpy as np

from mdphom.core import GroundMDPModel
from mdphom.envs.base import Environment, StepOutcome


def random_model(rng: np.random.Generator, max_states: int = 8, max_actions: int = 4,
                 rewards=(0.0, 1.0)) -> GroundMDPModel:
    """Random deterministic MDP over integer states.

    At least one state is terminal (absorbing, no actions) and each
    terminal state has an incoming pair; every other state has a random
    non-empty subset of the actions. Rewards come from a
    small set so that non-trivial abstractions exist.
    """
    n = int(rng.integers(3, max_states + 1))
    n_act = int(rng.integers(2, max_actions + 1))
    n_term = int(rng.integers(1, 3))
    terminal = frozenset(range(n - n_term, n))
    actions, nxt, rew = {}, {}, {}
    for s in range(n):
        if s in terminal:
            actions[s] = ()
            continue
        k = int(rng.integers(1, n_act + 1))
        acts = tuple(sorted(rng.choice(n_act, size=k, replace=False).tolist()))
        actions[s] = acts
        for a in acts:
            nxt[(s, a)] = int(rng.integers(n))
            rew[(s, a)] = float(rng.choice(rewards))
    # every terminal state should be entered by some pair
    free = sorted(nxt)
    for t in sorted(terminal - set(nxt.values())):
        if not free:
            break
        nxt[free.pop(int(rng.integers(len(free))))] = t
    return GroundMDPModel(list(range(n)), actions, nxt, rew, terminal)


def chain_model(n: int = 5, goal_reward: float = 1.0) -> GroundMDPModel:
    """Left/right chain; entering the last state pays ``goal_reward`` and ends."""
    actions, nxt, rew = {}, {}, {}
    for s in range(n):
        if s == n - 1:
            actions[s] = ()
            continue
        actions[s] = (0, 1)
        for a, t in ((0, max(s - 1, 0)), (1, s + 1)):
            nxt[(s, a)] = t
            rew[(s, a)] = goal_reward if t == n - 1 else 0.0
    return GroundMDPModel(list(range(n)), actions, nxt, rew, frozenset({n - 1}))


class ModelEnv(Environment):
    """An Environment backed by a GroundMDPModel with integer states."""

    def __init__(self, model: GroundMDPModel, starts=None, max_steps: int = 50):
        self.model = model
        self.n_states = len(model.states)
        self.n_actions = 1 + max((a for s in model.states for a in model.actions[s]), default=0)
        self.max_steps = max_steps
        self._starts = list(starts) if starts is not None else [s for s in model.states if model.actions[s]]

    def reset(self, rng):
        return self._starts[int(rng.integers(len(self._starts)))]

    def step(self, state, action):
        t = self.model.next_state[(state, action)]
        return StepOutcome(t, self.model.reward[(state, action)], t in self.model.terminal)

    def admissible(self, state):
        return self.model.actions[state]

    def is_goal(self, state):
        return state in self.model.terminal

    def start_states(self):
        return list(self._starts)

    def encode(self, state, action):
        x = np.zeros(self.n_states + self.n_actions)
        x[self.model.states.index(state)] = 1.0
        x[self.n_states + action] = 1.0
        return x
