"""Planning in a quotient MDP and acting with it in the ground MDP."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from mdphom import kernels
from mdphom.classifiers import Classifier
from mdphom.core import ContractViolation, QuotientMDP, StateBlockKey, make_key


class NonConverged(RuntimeError):
    pass


@dataclass
class PlannerConfig:
    gamma: float = 0.9
    sweep_tolerance: float = 1e-9
    max_sweeps: int = 100_000

    def __post_init__(self):
        if not 0.0 < self.gamma <= 1.0:
            raise ContractViolation("gamma must lie in (0, 1]")
        if self.sweep_tolerance <= 0 or self.max_sweeps < 1:
            raise ContractViolation("sweep_tolerance and max_sweeps must be positive")


class QValueTable(dict):
    """(quotient state, block id) -> optimal Q. ``deltas`` logs the sweeps."""

    deltas: list[float]

    def best(self, q: QuotientMDP, i: int) -> int | None:
        """Greedy abstract action at ``i``; ties go to the lowest block id."""
        acts = q.states[i]
        if not acts:
            return None
        return max(acts, key=lambda b: (self[(i, b)], -b))

    def value(self, q: QuotientMDP, i: int) -> float:
        b = self.best(q, i)
        return 0.0 if b is None else self[(i, b)]

    def to_json(self) -> list:
        return [[i, b, v] for (i, b), v in sorted(self.items())]

    @classmethod
    def from_json(cls, rows) -> "QValueTable":
        table = cls(((int(i), int(b)), float(v)) for i, b, v in rows)
        table.deltas = []
        return table


def _tables(q: QuotientMDP, reward=None, absorbing=()):
    cells = [(i, b) for i in range(len(q)) if i not in absorbing for b in q.states[i]]
    counts = np.zeros(len(q), dtype=np.int64)
    for i, _ in cells:
        counts[i] += 1
    ptr = np.concatenate([[0], np.cumsum(counts)]).astype(np.int64)
    rew = np.array([(reward or q.reward)[c] for c in cells], dtype=np.float64)
    succ = np.array([q.transition[c] for c in cells], dtype=np.int64)
    return cells, ptr, rew, succ


def value_iteration(q: QuotientMDP, cfg: PlannerConfig = PlannerConfig(), reward=None,
                    absorbing: Sequence[int] = ()) -> QValueTable:
    """Synchronous value iteration on a deterministic quotient.

    ``reward`` overrides the quotient rewards and states in ``absorbing``
    are treated as terminal (both used for option policies).
    """
    cells, ptr, rew, succ = _tables(q, reward, set(absorbing))
    vals = np.zeros(len(cells))
    new = np.empty_like(vals)
    deltas = []
    for _ in range(cfg.max_sweeps):
        delta = kernels.bellman_sweep(rew, succ, ptr, float(cfg.gamma), vals, new)
        vals, new = new, vals
        deltas.append(delta)
        if delta < cfg.sweep_tolerance:
            break
    else:
        raise NonConverged(f"no convergence in {cfg.max_sweeps} sweeps (last delta {deltas[-1]:.3g})")
    table = QValueTable(zip(cells, vals.tolist()))
    table.deltas = deltas
    return table


def jaccard(a: StateBlockKey, b: StateBlockKey) -> float:
    if not a and not b:
        return 1.0
    sa, sb = set(a), set(b)
    return len(sa & sb) / len(sa | sb)


def localize_key(key: StateBlockKey, q: QuotientMDP) -> int | None:
    """Quotient state for a predicted key: exact match, else best Jaccard
    match (lowest index on ties), else None."""
    if key in q.index:
        return q.index[key]
    best, best_sim = None, 0.0
    for i, k in enumerate(q.states):
        sim = jaccard(key, k)
        if sim > best_sim:
            best, best_sim = i, sim
    return best


def predict_key(predictions, confidence_threshold: float) -> StateBlockKey:
    return make_key(b for _, b, conf in predictions if conf >= confidence_threshold)


def localize(s, g: Classifier, actions: Sequence[int], q: QuotientMDP,
             confidence_threshold: float = 0.0) -> int | None:
    preds = [(a, *p) for a, p in zip(actions, g.predict_many(s, list(actions)))]
    return localize_key(predict_key(preds, confidence_threshold), q)


def choose_ground(predictions, block: int, rng: np.random.Generator,
                  confidence_threshold: float = 0.0) -> int | None:
    """Sample a ground action predicted as ``block``, proportional to confidence."""
    cands = [(a, conf) for a, b, conf in predictions if b == block and conf >= confidence_threshold]
    if not cands:
        return None
    if len(cands) == 1:
        return cands[0][0]
    w = np.array([c for _, c in cands], dtype=float)
    if w.sum() <= 0:
        w = np.ones_like(w)
    return cands[int(rng.choice(len(cands), p=w / w.sum()))][0]


def select_action(s, g: Classifier, actions: Sequence[int], q: QuotientMDP, qv: QValueTable,
                  rng: np.random.Generator, confidence_threshold: float = 0.0) -> tuple[int, bool]:
    """Greedy quotient action lifted to a ground action.

    Returns ``(action, fallback)``; ``fallback`` is True when the state could
    not be localized or no ground action maps to the chosen block, in which
    case the action is uniform over ``actions``.
    """
    return QuotientPolicy(g, q, qv, confidence_threshold, cache=False).act(s, actions, rng)


class QuotientPolicy:
    """Acts greedily w.r.t. a solved quotient; caches per-state predictions."""

    def __init__(self, g: Classifier, q: QuotientMDP, qv: QValueTable,
                 confidence_threshold: float = 0.0, cache: bool = True):
        self.g, self.q, self.qv = g, q, qv
        self.confidence_threshold = confidence_threshold
        self._cache: dict | None = {} if cache else None
        self.fallbacks = 0
        self.decisions = 0

    def predictions(self, s, actions: Sequence[int]):
        if self._cache is not None and s in self._cache:
            return self._cache[s]
        preds = [(a, *p) for a, p in zip(actions, self.g.predict_many(s, list(actions)))]
        if self._cache is not None:
            self._cache[s] = preds
        return preds

    def locate(self, s, actions: Sequence[int]) -> int | None:
        return localize_key(predict_key(self.predictions(s, actions), self.confidence_threshold), self.q)

    def act(self, s, actions: Sequence[int], rng: np.random.Generator,
            qv: QValueTable | None = None) -> tuple[int, bool]:
        """Lifted greedy action; ``qv`` overrides the policy's own table."""
        self.decisions += 1
        i = self.locate(s, actions)
        action = None
        if i is not None:
            block = (self.qv if qv is None else qv).best(self.q, i)
            if block is not None:
                action = choose_ground(self.predictions(s, actions), block, rng, self.confidence_threshold)
        if action is None:
            self.fallbacks += 1
            return int(actions[int(rng.integers(len(actions)))]), True
        return int(action), False
