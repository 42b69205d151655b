"""Blocks world with three blocks and four positions.

A state is a tuple of four columns, each a tuple of block ids from bottom
to top. Action ``k`` moves the top block of column ``i`` onto column ``j``
for the k-th ordered pair ``(i, j)``, ``i != j``. Moving from an empty
column is a penalized no-op.
"""
from __future__ import annotations

from itertools import permutations, product

import numpy as np

from mdphom.envs.base import Environment, StepOutcome

N_BLOCKS = 3
N_COLUMNS = 4
MOVES = [(i, j) for i in range(N_COLUMNS) for j in range(N_COLUMNS) if i != j]
STEP_REWARD = -1.0
GOAL_REWARD = 100.0
FEATURES = ("afterstate", "relational", "onehot")


def all_states():
    """Every stacking of the three labeled blocks into four ordered columns."""
    out = []
    for order in permutations(range(N_BLOCKS)):
        for cols in product(range(N_COLUMNS), repeat=N_BLOCKS):
            columns = [[] for _ in range(N_COLUMNS)]
            for block, col in zip(order, cols):
                columns[col].append(block)
            out.append(tuple(tuple(c) for c in columns))
    return sorted(set(out))


def locate(state, block: int) -> tuple[int, int]:
    for col, stack in enumerate(state):
        if block in stack:
            return col, stack.index(block)
    raise ValueError(f"block {block} missing from {state}")


def _positions(state) -> np.ndarray:
    """One-hot column and one-hot height of every block."""
    x = np.zeros(N_BLOCKS * N_COLUMNS + N_BLOCKS * N_BLOCKS)
    for block in range(N_BLOCKS):
        col, h = locate(state, block)
        x[block * N_COLUMNS + col] = 1.0
        x[N_BLOCKS * N_COLUMNS + block * N_BLOCKS + h] = 1.0
    return x


class BlocksWorld(Environment):
    """Reach a goal (column, height) with the focus block.

    Episodes start from a uniformly drawn non-goal state, or from ``start``
    when given.
    """

    n_actions = len(MOVES)

    def __init__(self, focus: int = 0, column: int = 0, height: int = 0,
                 max_steps: int = 50, start=None, features: str = "afterstate"):
        if features not in FEATURES:
            raise ValueError(f"features must be one of {FEATURES}")
        if not (0 <= focus < N_BLOCKS and 0 <= column < N_COLUMNS and 0 <= height < N_BLOCKS):
            raise ValueError("goal out of range")
        self.goal = (focus, column, height)
        self.max_steps = max_steps
        self.start = start
        self.features = features
        self._states = all_states()

    def __repr__(self):
        return f"BlocksWorld(goal={self.goal})"

    def is_goal(self, state) -> bool:
        focus, column, height = self.goal
        return locate(state, focus) == (column, height)

    def start_states(self):
        if self.start is not None:
            return [self.start]
        return [s for s in self._states if not self.is_goal(s)]

    def reset(self, rng: np.random.Generator):
        if self.start is not None:
            return self.start
        starts = self._start_list
        return starts[int(rng.integers(len(starts)))]

    @property
    def _start_list(self):
        if "_sl" not in self.__dict__:
            self.__dict__["_sl"] = self.start_states()
        return self.__dict__["_sl"]

    def step(self, state, action: int) -> StepOutcome:
        nxt = self._apply(state, action)
        goal = self.is_goal(nxt)
        return StepOutcome(nxt, GOAL_REWARD if goal else STEP_REWARD, goal)

    def encode(self, state, action: int) -> np.ndarray:
        """Features of a state-action pair.

        ``afterstate``: block positions after the move. Pairs that land in
        the same state share reward and successor, so this is all a
        deterministic partition can depend on.
        ``relational``: after-move positions, the moved block (or none),
        and before-move positions.
        ``onehot``: before-move positions and a one-hot action index.
        """
        if self.features == "onehot":
            act = np.zeros(self.n_actions)
            act[action] = 1.0
            return np.concatenate([_positions(state), act])
        after = _positions(self._apply(state, action))
        if self.features == "afterstate":
            return after
        i, _ = MOVES[action]
        moved = np.zeros(N_BLOCKS + 1)
        moved[state[i][-1] if state[i] else N_BLOCKS] = 1.0
        return np.concatenate([after, moved, _positions(state)])

    @staticmethod
    def _apply(state, action: int):
        i, j = MOVES[action]
        if not state[i]:
            return state
        cols = list(state)
        block = cols[i][-1]
        cols[i] = cols[i][:-1]
        cols[j] = cols[j] + (block,)
        return tuple(cols)

    def render(self, state) -> str:
        rows = []
        for h in reversed(range(N_BLOCKS)):
            rows.append(" ".join("ABC"[c[h]] if len(c) > h else "." for c in state))
        return "\n".join(rows)
