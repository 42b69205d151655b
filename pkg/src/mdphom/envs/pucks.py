"""Discrete grid pucks world.

A state is ``(heights, hand)`` where ``heights`` is a row-major tuple of
N*N stack heights and ``hand`` is 1 while a puck is held. Each grid cell is
one action: with an empty hand it picks the top puck of that cell (a no-op
on an empty cell); with a full hand it places the puck on that cell.
"""
from __future__ import annotations

from itertools import combinations

import numpy as np

from mdphom.envs.base import Environment, StepOutcome

TASKS = ("stack", "two_stacks", "component", "stairs")
GOAL_REWARD = 10.0


def neighbors(cell: int, size: int):
    r, c = divmod(cell, size)
    if r > 0:
        yield cell - size
    if r < size - 1:
        yield cell + size
    if c > 0:
        yield cell - 1
    if c < size - 1:
        yield cell + 1


def is_connected(cells: list[int], size: int) -> bool:
    cells = set(cells)
    if not cells:
        return False
    todo = [next(iter(cells))]
    seen = set(todo)
    while todo:
        for n in neighbors(todo.pop(), size):
            if n in cells and n not in seen:
                seen.add(n)
                todo.append(n)
    return seen == cells


def goal_predicate(task: str, heights: tuple[int, ...], hand: int, n_pucks: int, size: int) -> bool:
    """Goal configurations, invariant to translation and orientation.

    stack: all pucks in one cell. two_stacks: two cells of height two.
    component: every puck on the ground, forming one 4-connected region.
    stairs: a one-high and a two-high cell side by side.
    """
    if hand or sum(heights) != n_pucks:
        return False
    occupied = [i for i, h in enumerate(heights) if h]
    tall = sorted(heights[i] for i in occupied)
    if task == "stack":
        return tall == [n_pucks]
    if task == "two_stacks":
        return tall == [2, 2]
    if task == "component":
        return tall == [1] * n_pucks and is_connected(occupied, size)
    if task == "stairs":
        return tall == [1, 2] and occupied[1] in set(neighbors(occupied[0], size))
    raise ValueError(f"unknown task {task!r}")


class PucksWorld(Environment):
    def __init__(self, size: int = 3, n_pucks: int = 2, task: str = "stack",
                 max_steps: int = 20, max_height: int | None = None):
        if task not in TASKS:
            raise ValueError(f"task must be one of {TASKS}")
        if not 1 <= n_pucks <= size * size:
            raise ValueError("need 1 <= n_pucks <= size**2")
        self.size, self.n_pucks, self.task = size, n_pucks, task
        self.max_steps = max_steps
        self.max_height = n_pucks if max_height is None else max_height
        self.n_actions = size * size

    def __repr__(self):
        return f"PucksWorld(size={self.size}, n_pucks={self.n_pucks}, task={self.task!r})"

    def is_goal(self, state) -> bool:
        heights, hand = state
        return goal_predicate(self.task, heights, hand, self.n_pucks, self.size)

    def start_states(self):
        """Every non-goal layout of single pucks on distinct cells, hand empty."""
        for cells in combinations(range(self.n_actions), self.n_pucks):
            heights = [0] * self.n_actions
            for c in cells:
                heights[c] = 1
            s = (tuple(heights), 0)
            if not self.is_goal(s):
                yield s

    def reset(self, rng: np.random.Generator):
        while True:
            cells = rng.choice(self.n_actions, size=self.n_pucks, replace=False)
            heights = np.zeros(self.n_actions, dtype=int)
            heights[cells] = 1
            s = (tuple(int(h) for h in heights), 0)
            if not self.is_goal(s):
                return s

    def step(self, state, action: int) -> StepOutcome:
        heights, hand = state
        h = heights[action]
        if hand == 0 and h > 0:
            nxt = (heights[:action] + (h - 1,) + heights[action + 1:], 1)
        elif hand == 1 and h + 1 <= self.max_height:
            nxt = (heights[:action] + (h + 1,) + heights[action + 1:], 0)
        else:
            nxt = state
        goal = self.is_goal(nxt)
        return StepOutcome(nxt, GOAL_REWARD if goal else 0.0, goal)

    def encode(self, state, action: int) -> np.ndarray:
        heights, hand = state
        x = np.zeros(2 * self.n_actions + 1)
        x[: self.n_actions] = heights
        x[self.n_actions] = hand
        x[self.n_actions + 1 + action] = 1.0
        return x

    def render(self, state) -> str:
        heights, hand = state
        rows = [" ".join(str(h) if h else "." for h in heights[r * self.size:(r + 1) * self.size])
                for r in range(self.size)]
        return "\n".join(rows) + f"\nhand: {'puck' if hand else 'empty'}"
