from __future__ import annotations

from abc import ABC, abstractmethod
from collections import deque
from typing import Iterable, NamedTuple

import numpy as np

from mdphom.core import GroundMDPModel


class TooLarge(RuntimeError):
    """The environment is too big to enumerate."""


class StepOutcome(NamedTuple):
    next_state: object
    reward: float
    terminal: bool


class Environment(ABC):
    """Deterministic, value-semantic environment: states are immutable values."""

    n_actions: int
    max_steps: int

    @abstractmethod
    def reset(self, rng: np.random.Generator):
        ...

    @abstractmethod
    def step(self, state, action: int) -> StepOutcome:
        ...

    def admissible(self, state) -> tuple[int, ...]:
        return tuple(range(self.n_actions))

    @abstractmethod
    def encode(self, state, action: int) -> np.ndarray:
        ...

    @abstractmethod
    def is_goal(self, state) -> bool:
        ...

    @abstractmethod
    def start_states(self) -> Iterable:
        ...

    def is_start(self, state) -> bool:
        return state in self._start_set

    @property
    def _start_set(self) -> frozenset:
        cached = self.__dict__.get("_starts")
        if cached is None:
            cached = self.__dict__["_starts"] = frozenset(self.start_states())
        return cached

    def render(self, state) -> str:
        return repr(state)


def enumerate_model(env: Environment, starts: Iterable | None = None,
                    limit: int = 200_000) -> GroundMDPModel:
    """Breadth-first closure of the reachable states with full tables.

    Goal states are terminal and carry no admissible actions.
    """
    seen: dict = {}
    for s in env.start_states() if starts is None else starts:
        seen[s] = None
        if len(seen) > limit:
            raise TooLarge(f"more than {limit} start states")
    frontier = deque(seen)
    actions, nxt, rew = {}, {}, {}
    terminal = set()
    while frontier:
        s = frontier.popleft()
        if env.is_goal(s):
            actions[s] = ()
            terminal.add(s)
            continue
        acts = tuple(env.admissible(s))
        actions[s] = acts
        if len(nxt) + len(acts) > limit:
            raise TooLarge(f"more than {limit} state-action pairs")
        for a in acts:
            out = env.step(s, a)
            nxt[(s, a)] = out.next_state
            rew[(s, a)] = float(out.reward)
            if out.next_state not in seen:
                if len(seen) >= limit:
                    raise TooLarge(f"more than {limit} states")
                seen[out.next_state] = None
                frontier.append(out.next_state)
    return GroundMDPModel(list(seen), actions, nxt, rew, frozenset(terminal))
