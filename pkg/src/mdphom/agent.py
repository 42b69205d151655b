"""Tabular Q-learning with linearly annealed epsilon-greedy exploration.

Serves both as the experience collector for abstraction and as the
no-transfer baseline.
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

from mdphom.core import ContractViolation, ExperienceBuffer, Transition
from mdphom.envs.base import Environment


@dataclass
class AgentConfig:
    alpha: float = 0.1
    gamma: float = 0.9
    epsilon_start: float = 1.0
    epsilon_end: float = 0.1
    epsilon_anneal_steps: int = 40_000
    buffer_capacity: int = 100_000
    episodes: int = 1000
    max_total_steps: int | None = None

    def __post_init__(self):
        if not (0 < self.alpha <= 1 and 0 < self.gamma <= 1):
            raise ContractViolation("alpha and gamma must lie in (0, 1]")
        if not (0 <= self.epsilon_end <= 1 and 0 <= self.epsilon_start <= 1):
            raise ContractViolation("epsilon must lie in [0, 1]")
        if self.buffer_capacity < 1 or self.episodes < 1:
            raise ContractViolation("buffer_capacity and episodes must be positive")

    def epsilon(self, step: int) -> float:
        if self.epsilon_anneal_steps <= 0:
            return self.epsilon_end
        frac = min(1.0, step / self.epsilon_anneal_steps)
        return self.epsilon_start + frac * (self.epsilon_end - self.epsilon_start)


class EpisodeRecord(NamedTuple):
    episode: int
    steps: int
    ret: float
    success: bool
    cumulative_steps: int


@dataclass
class AgentRun:
    q: dict
    buffer: ExperienceBuffer
    episodes: list[EpisodeRecord] = field(default_factory=list)

    @property
    def successes(self) -> list[bool]:
        return [e.success for e in self.episodes]

    def steps_to_criterion(self, window: int = 50, threshold: float = 0.8) -> int | None:
        return success_window_metric(self.successes, [e.cumulative_steps for e in self.episodes],
                                     window, threshold)

    def metrics_csv(self) -> str:
        return episodes_csv(self.episodes)

    def greedy_policy(self) -> dict:
        return {s: int(np.argmax(row)) for s, row in self.q.items()}


def episodes_csv(episodes: Sequence[EpisodeRecord]) -> str:
    out = io.StringIO()
    w = csv.writer(out, lineterminator="\n")
    w.writerow(["episode", "steps", "return", "success", "cumulative_steps"])
    for e in episodes:
        w.writerow([e.episode, e.steps, f"{e.ret:g}", int(e.success), e.cumulative_steps])
    return out.getvalue()


def success_window_metric(successes: Sequence[bool], cumulative_steps: Sequence[int],
                          window: int = 50, threshold: float = 0.8) -> int | None:
    """Cumulative steps at the first episode whose trailing ``window``
    episodes succeed at rate >= ``threshold``; None if that never happens."""
    if len(successes) != len(cumulative_steps):
        raise ContractViolation("successes and cumulative_steps differ in length")
    need = threshold * window - 1e-9
    hits = 0
    for i, ok in enumerate(successes):
        hits += bool(ok)
        if i >= window:
            hits -= bool(successes[i - window])
        if i >= window - 1 and hits >= need:
            return int(cumulative_steps[i])
    return None


class TabularLearner:
    """Q-table plus the epsilon-greedy choice rule shared with the options agent.

    Random draws per decision: one uniform for the epsilon test, then one
    integer either for the exploratory pick or to break greedy ties.
    """

    def __init__(self, env: Environment, cfg: AgentConfig, rng: np.random.Generator):
        self.env, self.cfg, self.rng = env, cfg, rng
        self.q: dict = {}
        self.t = 0

    def row(self, s) -> np.ndarray:
        r = self.q.get(s)
        if r is None:
            r = self.q[s] = np.zeros(self.env.n_actions)
        return r

    def value(self, s, actions: Sequence[int]) -> float:
        return float(self.row(s)[list(actions)].max())

    def pick(self, scores: np.ndarray) -> int:
        """Epsilon-greedy index into ``scores``."""
        if self.rng.random() < self.cfg.epsilon(self.t):
            return int(self.rng.integers(len(scores)))
        best = np.flatnonzero(scores == scores.max())
        if len(best) == 1:
            return int(best[0])
        return int(best[self.rng.integers(len(best))])

    def update(self, t: Transition, actions_next: Sequence[int]) -> None:
        row = self.row(t.state)
        target = t.reward
        if not t.terminal and len(actions_next):
            target += self.cfg.gamma * self.value(t.next_state, actions_next)
        row[t.action] += self.cfg.alpha * (target - row[t.action])


def q_learning_run(env: Environment, cfg: AgentConfig, seed: int) -> AgentRun:
    """Standard tabular Q-learning; every step lands in a FIFO buffer."""
    rng = np.random.default_rng(seed)
    learner = TabularLearner(env, cfg, rng)
    buffer = ExperienceBuffer(cfg.buffer_capacity)
    records = []
    for ep in range(cfg.episodes):
        if cfg.max_total_steps is not None and learner.t >= cfg.max_total_steps:
            break
        s = env.reset(rng)
        ret, steps, success = 0.0, 0, False
        while steps < env.max_steps:
            if cfg.max_total_steps is not None and learner.t >= cfg.max_total_steps:
                break
            actions = env.admissible(s)
            a = actions[learner.pick(learner.row(s)[list(actions)])]
            out = env.step(s, a)
            t = Transition(s, a, out.reward, out.next_state, out.terminal)
            buffer.append(t)
            learner.update(t, env.admissible(out.next_state))
            learner.t += 1
            steps += 1
            ret += out.reward
            s = out.next_state
            if out.terminal:
                success = True
                break
        records.append(EpisodeRecord(ep, steps, ret, success, learner.t))
    return AgentRun(learner.q, buffer, records)


def random_experience(env: Environment, episodes: int, seed: int,
                      capacity: int = 1_000_000) -> ExperienceBuffer:
    """Experience from a uniformly random policy (no learning)."""
    rng = np.random.default_rng(seed)
    buffer = ExperienceBuffer(capacity)
    for _ in range(episodes):
        s = env.reset(rng)
        for _ in range(env.max_steps):
            actions = env.admissible(s)
            a = actions[int(rng.integers(len(actions)))]
            out = env.step(s, a)
            buffer.append(Transition(s, a, out.reward, out.next_state, out.terminal))
            s = out.next_state
            if out.terminal:
                break
    return buffer
