"""Formal objects shared by the whole package.

State-action partitions over an experience buffer, their projection onto
states, quotient MDP construction, and the predicates used to audit them
(reward-respecting, substitution property, homomorphism).

States are any hashable, canonical value produced by an environment (the
shipped environments use nested tuples of ints). Two states are the same
state iff they compare equal.
"""
from __future__ import annotations

import json
from collections import Counter, deque
from dataclasses import dataclass, field
from functools import cached_property
from typing import Hashable, Iterable, Iterator, Mapping, NamedTuple, Sequence

import numpy as np

StateKey = Hashable
StateBlockKey = tuple  # sorted tuple of block ids

REWARD_TOL = 1e-9


class ContractViolation(ValueError):
    """An operation was called outside its precondition."""


class InconsistentPartition(RuntimeError):
    """Members of one quotient cell disagree on reward or successor."""


class Transition(NamedTuple):
    state: StateKey
    action: int
    reward: float
    next_state: StateKey
    terminal: bool


class ExperienceBuffer:
    """FIFO store of transitions. Indices are stable while nothing is appended."""

    def __init__(self, capacity: int, transitions: Iterable[Transition] = ()):
        if capacity < 1:
            raise ContractViolation("capacity must be positive")
        self.capacity = capacity
        self._items: deque[Transition] = deque(maxlen=capacity)
        for t in transitions:
            self.append(t)

    def append(self, t: Transition) -> None:
        if not np.isfinite(t.reward):
            raise ContractViolation(f"non-finite reward in {t}")
        self._items.append(t)

    def extend(self, ts: Iterable[Transition]) -> None:
        for t in ts:
            self.append(t)

    def __len__(self) -> int:
        return len(self._items)

    def __iter__(self) -> Iterator[Transition]:
        return iter(self._items)

    def __getitem__(self, i: int) -> Transition:
        return self._items[i]

    def snapshot(self) -> tuple[Transition, ...]:
        return tuple(self._items)


def as_transitions(experience: ExperienceBuffer | Sequence[Transition]) -> Sequence[Transition]:
    if isinstance(experience, ExperienceBuffer):
        return experience.snapshot()
    return experience


# --------------------------------------------------------------------------
# partitions


class Partition:
    """A partition of transition indices ``0..n-1`` into blocks.

    Immutable: splitting returns a new partition. A split retires the parent
    id and mints two fresh ids, so ids are never reused within a run.
    """

    def __init__(self, blocks: Mapping[int, Iterable[int]], next_id: int | None = None):
        self._members: dict[int, np.ndarray] = {}
        for b, members in blocks.items():
            arr = np.unique(np.fromiter(members, dtype=np.int64))
            arr.flags.writeable = False
            self._members[int(b)] = arr
        self.next_id = max(self._members, default=-1) + 1 if next_id is None else next_id
        self.check()

    @classmethod
    def trivial(cls, n: int) -> "Partition":
        return cls({0: range(n)}) if n else cls({})

    @classmethod
    def singletons(cls, n: int) -> "Partition":
        return cls({i: [i] for i in range(n)})

    @classmethod
    def from_labels(cls, labels: Sequence[Hashable]) -> "Partition":
        """Group indices by label; ids follow first appearance."""
        ids: dict[Hashable, int] = {}
        groups: dict[int, list[int]] = {}
        for i, lab in enumerate(labels):
            b = ids.setdefault(lab, len(ids))
            groups.setdefault(b, []).append(i)
        return cls(groups)

    # -- access

    @property
    def ids(self) -> list[int]:
        return sorted(self._members)

    def members(self, b: int) -> np.ndarray:
        return self._members[b]

    @cached_property
    def blocks(self) -> dict[int, frozenset[int]]:
        return {b: frozenset(m.tolist()) for b, m in self._members.items()}

    @cached_property
    def size(self) -> int:
        return sum(len(m) for m in self._members.values())

    @cached_property
    def assignment(self) -> np.ndarray:
        labels = np.full(self.size, -1, dtype=np.int64)
        for b, m in self._members.items():
            labels[m] = b
        labels.flags.writeable = False
        return labels

    def block_of(self, i: int) -> int:
        return int(self.assignment[i])

    def __len__(self) -> int:
        return len(self._members)

    def __contains__(self, b: int) -> bool:
        return b in self._members

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Partition):
            return NotImplemented
        if self._members.keys() != other._members.keys():
            return False
        return all(np.array_equal(m, other._members[b]) for b, m in self._members.items())

    __hash__ = None  # type: ignore[assignment]

    def __repr__(self) -> str:
        return f"Partition({len(self)} blocks over {self.size} transitions)"

    # -- mutation by copy

    def split_block(self, b: int, first: np.ndarray, second: np.ndarray) -> "Partition":
        """Replace block ``b`` by ``first`` and ``second`` under fresh ids."""
        new = Partition.__new__(Partition)
        new._members = dict(self._members)
        del new._members[b]
        for offset, part in enumerate((first, second)):
            arr = np.sort(np.asarray(part, dtype=np.int64))
            arr.flags.writeable = False
            new._members[self.next_id + offset] = arr
        new.next_id = self.next_id + 2
        return new

    def check(self) -> None:
        """Assert the disjoint-cover invariant over ``0..size-1``."""
        seen = np.zeros(self.size, dtype=bool)
        for b, m in self._members.items():
            if len(m) == 0:
                raise ContractViolation(f"block {b} is empty")
            if m[-1] >= self.size or m[0] < 0 or seen[m].any():
                raise ContractViolation("blocks are not a disjoint cover of 0..n-1")
            seen[m] = True

    def relation(self) -> frozenset[frozenset[int]]:
        """Block structure with ids forgotten (equality up to relabeling)."""
        return frozenset(frozenset(m.tolist()) for m in self._members.values())

    def to_json(self) -> dict:
        return {"next_id": self.next_id, "blocks": {str(b): m.tolist() for b, m in sorted(self._members.items())}}

    @classmethod
    def from_json(cls, doc: Mapping) -> "Partition":
        return cls({int(b): m for b, m in doc["blocks"].items()}, next_id=doc["next_id"])


def is_refinement(fine: Partition, coarse: Partition) -> bool:
    """True iff every block of ``fine`` lies inside one block of ``coarse``."""
    if fine.size != coarse.size:
        raise ContractViolation("partitions index different transition sets")
    labels = coarse.assignment
    for b in fine.ids:
        owners = labels[fine.members(b)]
        if (owners != owners[0]).any():
            return False
    return True


def pair_relation(partition: Partition, experience) -> frozenset[frozenset]:
    """Partition of (state, action) pairs induced by a transition partition.

    Raises ContractViolation when duplicates of one pair sit in different
    blocks, since the induced relation would then be ill-defined.
    """
    ts = as_transitions(experience)
    owner: dict[tuple, int] = {}
    for i, b in enumerate(partition.assignment.tolist()):
        pair = (ts[i].state, ts[i].action)
        if owner.setdefault(pair, b) != b:
            raise ContractViolation(f"pair {pair} spans blocks {owner[pair]} and {b}")
    groups: dict[int, set] = {}
    for pair, b in owner.items():
        groups.setdefault(b, set()).add(pair)
    return frozenset(frozenset(g) for g in groups.values())


# --------------------------------------------------------------------------
# projection onto states


class StatePartition:
    """Grouping of states by their StateBlockKey."""

    def __init__(self, key_of: Mapping[StateKey, StateBlockKey]):
        self.key_of: dict[StateKey, StateBlockKey] = dict(key_of)

    @cached_property
    def blocks(self) -> dict[StateBlockKey, frozenset]:
        groups: dict[StateBlockKey, set] = {}
        for s, k in self.key_of.items():
            groups.setdefault(k, set()).add(s)
        return {k: frozenset(v) for k, v in groups.items()}

    @property
    def keys(self) -> list[StateBlockKey]:
        return sorted(self.blocks)

    def __len__(self) -> int:
        return len(self.blocks)

    def __getitem__(self, s: StateKey) -> StateBlockKey:
        return self.key_of[s]


def make_key(blocks: Iterable[int]) -> StateBlockKey:
    return tuple(sorted(set(int(b) for b in blocks)))


def terminal_states(ts: Sequence[Transition]) -> set:
    return {t.next_state for t in ts if t.terminal}


def project_exact(partition: Partition, experience) -> StatePartition:
    """Group observed states by the set of blocks holding their outgoing pairs."""
    ts = as_transitions(experience)
    if partition.size != len(ts):
        raise ContractViolation("partition does not index this experience")
    outgoing: dict[StateKey, set[int]] = {}
    for t in ts:
        outgoing.setdefault(t.state, set())
        outgoing.setdefault(t.next_state, set())
    for t, b in zip(ts, partition.assignment.tolist()):
        outgoing[t.state].add(b)
    return StatePartition({s: make_key(bs) for s, bs in outgoing.items()})


def block_transition(model: "GroundMDPModel", s: StateKey, a: int, block: Iterable[StateKey]) -> float:
    """Probability of landing in ``block`` from (s, a); 0 or 1 here."""
    if (s, a) not in model.next_state:
        raise ContractViolation(f"({s!r}, {a}) is not admissible")
    return 1.0 if model.next_state[(s, a)] in set(block) else 0.0


def is_reward_respecting(partition: Partition, experience, tol: float = REWARD_TOL) -> bool:
    rewards = np.array([t.reward for t in as_transitions(experience)], dtype=float)
    for b in partition.ids:
        r = rewards[partition.members(b)]
        if r.max() - r.min() > tol:
            return False
    return True


def has_ssp(partition: Partition, experience, proj: StatePartition) -> bool:
    """Deterministic substitution property: each block has one successor key."""
    ts = as_transitions(experience)
    for b in partition.ids:
        keys = {proj.key_of[ts[i].next_state] for i in partition.members(b).tolist()}
        if len(keys) > 1:
            return False
    return True


# --------------------------------------------------------------------------
# ground models (enumerable environments only)


@dataclass
class GroundMDPModel:
    states: list
    actions: dict  # state -> tuple of admissible actions; () for terminal states
    next_state: dict  # (state, action) -> state
    reward: dict  # (state, action) -> float
    terminal: frozenset = field(default_factory=frozenset)

    def pairs(self) -> Iterator[tuple]:
        for s in self.states:
            for a in self.actions[s]:
                yield s, a

    @property
    def n_pairs(self) -> int:
        return len(self.next_state)

    def to_experience(self) -> list[Transition]:
        """One transition per admissible pair, in canonical order."""
        return [
            Transition(s, a, float(self.reward[(s, a)]), self.next_state[(s, a)],
                       self.next_state[(s, a)] in self.terminal)
            for s, a in self.pairs()
        ]


# --------------------------------------------------------------------------
# quotient MDP


@dataclass
class QuotientMDP:
    """Deterministic abstract MDP, one state per StateBlockKey.

    The abstract actions at state ``i`` are identified by the block id that
    induced them, so ``actions[i] == states[i]``.
    """

    states: list[StateBlockKey]
    transition: dict[tuple[int, int], int]
    reward: dict[tuple[int, int], float]
    terminal: frozenset[int]

    @cached_property
    def index(self) -> dict[StateBlockKey, int]:
        return {k: i for i, k in enumerate(self.states)}

    @property
    def actions(self) -> list[tuple[int, ...]]:
        return [tuple(k) for k in self.states]

    def __len__(self) -> int:
        return len(self.states)

    @property
    def n_actions(self) -> int:
        return len(self.transition)

    def to_json(self) -> dict:
        cells = sorted(self.transition)
        return {
            "states": [list(k) for k in self.states],
            "actions": [list(a) for a in self.actions],
            "transitions": [[i, b, self.transition[(i, b)]] for i, b in cells],
            "rewards": [[i, b, self.reward[(i, b)]] for i, b in cells],
            "terminal": sorted(self.terminal),
        }

    @classmethod
    def from_json(cls, doc: Mapping) -> "QuotientMDP":
        return cls(
            states=[tuple(k) for k in doc["states"]],
            transition={(i, b): j for i, b, j in doc["transitions"]},
            reward={(i, b): float(r) for i, b, r in doc["rewards"]},
            terminal=frozenset(doc["terminal"]),
        )

    def dumps(self) -> str:
        return json.dumps(self.to_json(), sort_keys=True)


def build_quotient(partition: Partition, experience, proj: StatePartition,
                   tol: float = REWARD_TOL) -> QuotientMDP:
    """Quotient MDP induced by a reward-respecting SSP partition.

    Each cell (state block, block id) takes its reward and successor from
    member transitions rooted in that state block. A cell predicted by a
    classifier but never observed falls back to the block's most common
    outcome.
    """
    ts = as_transitions(experience)
    if partition.size != len(ts):
        raise ContractViolation("partition does not index this experience")
    keys = set(proj.key_of.values())
    if any(t.terminal for t in ts):
        keys.add(())
    states = sorted(keys)
    index = {k: i for i, k in enumerate(states)}

    cell_outcomes: dict[tuple[int, int], set] = {}
    block_outcomes: dict[int, Counter] = {}
    for t, b in zip(ts, partition.assignment.tolist()):
        succ = index[()] if t.terminal else index[proj.key_of[t.next_state]]
        src = index[proj.key_of[t.state]]
        outcome = (float(t.reward), succ)
        cell_outcomes.setdefault((src, b), set()).add(outcome)
        block_outcomes.setdefault(b, Counter())[outcome] += 1

    transition: dict[tuple[int, int], int] = {}
    reward: dict[tuple[int, int], float] = {}
    for i, key in enumerate(states):
        for b in key:
            seen = cell_outcomes.get((i, b))
            if seen:
                rewards = [r for r, _ in seen]
                succs = {j for _, j in seen}
                if max(rewards) - min(rewards) > tol or len(succs) > 1:
                    raise InconsistentPartition(
                        f"cell (state {key}, block {b}) has outcomes {sorted(seen)}")
                r, j = min(seen)
            elif b in block_outcomes:
                (r, j), _ = max(block_outcomes[b].items(), key=lambda kv: (kv[1], -kv[0][1]))
            else:
                raise InconsistentPartition(f"block {b} in key {key} has no members")
            transition[(i, b)] = j
            reward[(i, b)] = r
    terminal = frozenset(i for i, k in enumerate(states) if not k)
    return QuotientMDP(states=states, transition=transition, reward=reward, terminal=terminal)


def check_homomorphism(model: GroundMDPModel, q: QuotientMDP, f: Mapping, g: Mapping,
                       tol: float = REWARD_TOL) -> bool:
    """Check that (f, {g_s}) is an MDP homomorphism from ``model`` onto ``q``.

    ``f`` maps ground states to quotient indices and ``g`` maps ground pairs
    to abstract actions (block ids). Both maps must be surjective.
    """
    if set(f[s] for s in model.states) != set(range(len(q))):
        return False
    for s in model.states:
        i = f[s]
        if {g[(s, a)] for a in model.actions[s]} != set(q.states[i]):
            return False
        for a in model.actions[s]:
            cell = (i, g[(s, a)])
            if cell not in q.reward:
                return False
            if abs(model.reward[(s, a)] - q.reward[cell]) > tol:
                return False
            if q.transition[cell] != f[model.next_state[(s, a)]]:
                return False
    return True
