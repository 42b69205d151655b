"""Online Partition Iteration over an experience buffer.

The partition starts from reward classes and is refined by splitting
state-action blocks against state blocks obtained by projecting the
partition through a trained classifier, until a full outer pass leaves it
unchanged.
"""
from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np

from mdphom.classifiers import Classifier
from mdphom.core import (
    ContractViolation,
    Partition,
    StateBlockKey,
    StatePartition,
    Transition,
    as_transitions,
    make_key,
    project_exact,
    terminal_states,
)

log = logging.getLogger(__name__)

Admissible = Callable[[object], Sequence[int]]

OVER_SEGMENTED = "over_segmented"
MAX_ITERATIONS = "max_outer_iterations"


class ProjectionError(RuntimeError):
    """The classifier failed while projecting states."""


@dataclass
class PartitionConfig:
    block_size_threshold: int = 0
    confidence_threshold: float = 0.0
    max_blocks: int = 10
    max_outer_iterations: int = 20
    balance_classes: bool = False

    def __post_init__(self):
        if self.block_size_threshold < 0:
            raise ContractViolation("block_size_threshold must be >= 0")
        # values above 1 are allowed: they discard every prediction
        if self.confidence_threshold < 0.0:
            raise ContractViolation("confidence_threshold must be >= 0")
        if self.max_blocks < 1 or self.max_outer_iterations < 1:
            raise ContractViolation("max_blocks and max_outer_iterations must be >= 1")


class ProjectionResult(StatePartition):
    """State keys predicted by a classifier, with the raw predictions kept."""

    def __init__(self, key_of, predictions):
        super().__init__(key_of)
        self.predictions: dict[object, list[tuple[int, int, float]]] = predictions


def split_rewards(partition: Partition, experience) -> Partition:
    """Split the one-block partition into one block per distinct reward."""
    ts = as_transitions(experience)
    if len(partition) > 1:
        raise ContractViolation("split_rewards expects the trivial partition")
    groups: dict[float, list[int]] = {}
    for i, t in enumerate(ts):
        groups.setdefault(float(t.reward), []).append(i)
    if len(groups) <= 1:
        return partition
    blocks = {partition.next_id + k: groups[r] for k, r in enumerate(sorted(groups))}
    return Partition(blocks, next_id=partition.next_id + len(blocks))


def split(b: int, c: StateBlockKey, partition: Partition, proj: StatePartition,
          experience, min_size: int = 0) -> Partition:
    """Split block ``b`` by whether each member's next state lies in ``c``.

    Returns ``partition`` itself unless both halves are non-empty and hold
    at least ``min_size`` members.
    """
    ts = as_transitions(experience)
    members = partition.members(b)
    inside = np.array([proj.key_of[ts[i].next_state] == c for i in members.tolist()], dtype=bool)
    n_in = int(inside.sum())
    n_out = len(members) - n_in
    if n_in == 0 or n_out == 0 or n_in < min_size or n_out < min_size:
        return partition
    out = partition.split_block(b, members[inside], members[~inside])
    out.check()
    return out


def project_states(partition: Partition, g: Classifier, experience, cfg: PartitionConfig,
                   admissible: Admissible) -> ProjectionResult:
    """Key every observed state by the blocks ``g`` predicts for its actions.

    Predictions below the confidence threshold are dropped. States entered
    through a terminal transition have no admissible actions and get the
    empty key.
    """
    ts = as_transitions(experience)
    terminal = terminal_states(ts)
    states = dict.fromkeys(s for t in ts for s in (t.state, t.next_state))
    key_of: dict = {}
    predictions: dict = {}
    for s in states:
        if s in terminal:
            key_of[s] = ()
            predictions[s] = []
            continue
        actions = list(admissible(s))
        try:
            preds = g.predict_many(s, actions)
        except Exception as exc:
            raise ProjectionError(f"classifier failed on state {s!r}: {exc!r}") from exc
        predictions[s] = [(a, b, conf) for a, (b, conf) in zip(actions, preds)]
        key_of[s] = make_key(b for b, conf in preds if conf >= cfg.confidence_threshold)
    return ProjectionResult(key_of, predictions)


def training_set(partition: Partition, experience, balance: bool) -> tuple[list, list[int]]:
    """(pairs, labels) for the classifier; minority classes are repeated
    cyclically up to the majority class size when ``balance`` is set."""
    ts = as_transitions(experience)
    labels = partition.assignment.tolist()
    pairs = [(t.state, t.action) for t in ts]
    if not balance or len(partition) < 2:
        return pairs, labels
    majority = max(len(partition.members(b)) for b in partition.ids)
    for b in partition.ids:
        members = partition.members(b).tolist()
        extra = majority - len(members)
        for k in range(extra):
            i = members[k % len(members)]
            pairs.append(pairs[i])
            labels.append(b)
    return pairs, labels


def train_classifier(partition: Partition, g: Classifier, experience, cfg: PartitionConfig) -> Classifier:
    """Fit a fresh copy of ``g`` on the current labeling (no warm start)."""
    pairs, labels = training_set(partition, experience, cfg.balance_classes)
    return g.fresh().fit(pairs, labels)


@dataclass
class PartitionResult:
    partition: Partition
    classifier: Classifier | None
    projection: StatePartition
    flags: set[str] = field(default_factory=set)
    history: list[Partition] = field(default_factory=list)
    trace: list[dict] = field(default_factory=list)

    @property
    def converged(self) -> bool:
        return not self.flags

    def trace_lines(self) -> str:
        return "".join(json.dumps(r, sort_keys=True) + "\n" for r in self.trace)


def _refine(partition: Partition, proj: StatePartition, ts: Sequence[Transition],
            cfg: PartitionConfig) -> tuple[Partition, list, bool]:
    """One outer pass: split every block against every state block."""
    keys = proj.keys
    key_id = {k: i for i, k in enumerate(keys)}
    next_kid = np.array([key_id[proj.key_of[t.next_state]] for t in ts], dtype=np.int64)
    present = {b: set(np.unique(next_kid[partition.members(b)]).tolist()) for b in partition.ids}
    events = []
    for ci, c in enumerate(keys):
        for b in sorted(partition.ids):
            if ci not in present[b] or len(present[b]) == 1:
                continue
            members = partition.members(b)
            inside = next_kid[members] == ci
            n_in = int(inside.sum())
            n_out = len(members) - n_in
            if min(n_in, n_out) < cfg.block_size_threshold:
                continue
            if len(partition) + 1 > cfg.max_blocks:
                return partition, events, True
            first, second = members[inside], members[~inside]
            new_ids = (partition.next_id, partition.next_id + 1)
            partition = partition.split_block(b, first, second)
            partition.check()
            present[new_ids[0]] = {ci}
            present[new_ids[1]] = set(np.unique(next_kid[second]).tolist())
            del present[b]
            events.append({"block": b, "state_block": list(c), "into": list(new_ids), "sizes": [n_in, n_out]})
    return partition, events, False


def online_partition_iteration(experience, g: Classifier | None, cfg: PartitionConfig,
                               admissible: Admissible | None = None) -> PartitionResult:
    """Refine reward classes into a reward-respecting SSP partition.

    With ``g=None`` states are projected exactly from the partition itself
    (ground-truth projection); otherwise ``g`` is retrained from scratch on
    every outer iteration and states are projected through it over
    ``admissible(state)``.
    """
    ts = as_transitions(experience)
    if not ts:
        raise ContractViolation("experience is empty")
    if g is not None and admissible is None:
        raise ContractViolation("classifier projection needs an admissible-actions function")

    def project(B):
        if g is None:
            return None, project_exact(B, ts)
        clf = train_classifier(B, g, ts, cfg)
        return clf, project_states(B, clf, ts, cfg, admissible)

    B = split_rewards(Partition.trivial(len(ts)), ts)
    history = [B]
    trace = []
    flags: set[str] = set()
    if len(B) > cfg.max_blocks:
        # reward classes alone exceed the cap; they cannot be merged
        flags.add(OVER_SEGMENTED)
    iteration = 0
    clf, proj = None, None
    while True:
        iteration += 1
        before = B
        clf, proj = project(B)
        B, events, over = _refine(B, proj, ts, cfg)
        history.append(B)
        if over:
            flags.add(OVER_SEGMENTED)
        elif B != before and iteration >= cfg.max_outer_iterations:
            flags.add(MAX_ITERATIONS)
        trace.append({
            "iteration": iteration,
            "blocks": len(B),
            "state_blocks": len(proj),
            "splits": events,
            "flags": sorted(flags),
        })
        log.debug("outer iteration %d: %d blocks, %d state blocks, %d splits",
                  iteration, len(B), len(proj), len(events))
        if flags or B == before:
            break
    if B != before:
        clf, proj = project(B)
    return PartitionResult(B, clf, proj, flags, history, trace)


def config_dict(cfg: PartitionConfig) -> dict:
    return asdict(cfg)
