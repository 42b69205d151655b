"""Model-based reference implementations used as test oracles.

Kept deliberately independent of the online code path: partitioning here
is signature refinement over (state, action) pairs of a fully known model,
and value iteration is a plain dictionary loop.
"""
from __future__ import annotations

from mdphom.core import GroundMDPModel, Partition


def model_partition_pairs(model: GroundMDPModel) -> dict[tuple, int]:
    """Coarsest reward-respecting SSP labeling of the model's pairs.

    Pairs start grouped by reward. Each round relabels a pair by its current
    label together with the set of labels available at its successor (the
    successor's state block), until the number of classes stops growing.
    """
    pairs = list(model.pairs())
    rewards = sorted({model.reward[p] for p in pairs})
    label = {p: rewards.index(model.reward[p]) for p in pairs}
    n_classes = len(set(label.values()))
    while True:
        succ_key = {
            s: frozenset(label[(s, a)] for a in model.actions[s]) for s in model.states
        }
        signature = {p: (label[p], succ_key[model.next_state[p]]) for p in pairs}
        ids: dict = {}
        label = {p: ids.setdefault(signature[p], len(ids)) for p in pairs}
        if len(ids) == n_classes:
            return label
        n_classes = len(ids)


def model_partition_iteration(model: GroundMDPModel) -> Partition:
    """Oracle partition over ``model.to_experience()`` indices."""
    label = model_partition_pairs(model)
    return Partition.from_labels([label[p] for p in model.pairs()])


def ground_value_iteration(model: GroundMDPModel, gamma: float = 0.9,
                           tol: float = 1e-12, max_sweeps: int = 1_000_000) -> dict[tuple, float]:
    """Optimal Q over every admissible pair; terminal states are worth 0."""
    q = {p: 0.0 for p in model.pairs()}

    def v(s):
        acts = model.actions[s]
        return max(q[(s, a)] for a in acts) if acts and s not in model.terminal else 0.0

    for _ in range(max_sweeps):
        values = {s: v(s) for s in model.states}
        new = {p: model.reward[p] + gamma * values[model.next_state[p]] for p in q}
        delta = max((abs(new[p] - q[p]) for p in q), default=0.0)
        q = new
        if delta < tol:
            return q
    raise RuntimeError("ground value iteration did not converge")
