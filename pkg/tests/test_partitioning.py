import json
from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mdphom.classifiers import ExactClassifier, make_classifier
from mdphom.core import (
    ContractViolation,
    Partition,
    StatePartition,
    Transition,
    has_ssp,
    is_refinement,
    is_reward_respecting,
    pair_relation,
    project_exact,
)
from mdphom.envs import BlocksWorld, ModelEnv, enumerate_model
from mdphom.envs.random_mdp import random_model
from mdphom.oracle import model_partition_iteration
from mdphom.partitioning import (
    OVER_SEGMENTED,
    PartitionConfig,
    ProjectionError,
    online_partition_iteration,
    project_states,
    split,
    split_rewards,
    train_classifier,
    training_set,
)

from conftest import random_models


def T(s, a, r, s2, done=False):
    return Transition(s, a, r, s2, done)


# -- config ----------------------------------------------------------------


@pytest.mark.parametrize("kw", [
    {"max_blocks": 0},
    {"block_size_threshold": -1},
    {"confidence_threshold": -0.1},
    {"max_outer_iterations": 0},
])
def test_config_validation(kw):
    with pytest.raises(ContractViolation):
        PartitionConfig(**kw)


def test_config_defaults():
    cfg = PartitionConfig()
    assert (cfg.block_size_threshold, cfg.confidence_threshold) == (0, 0.0)
    assert (cfg.max_blocks, cfg.max_outer_iterations, cfg.balance_classes) == (10, 20, False)


# -- split_rewards ---------------------------------------------------------


def test_split_rewards_pucks(pucks_experience):
    p = split_rewards(Partition.trivial(len(pucks_experience)), pucks_experience)
    assert len(p) == 2
    assert is_reward_respecting(p, pucks_experience)


def test_split_rewards_blocks(blocks_model):
    ts = blocks_model.to_experience()
    p = split_rewards(Partition.trivial(len(ts)), ts)
    assert len(p) == 2
    assert {t.reward for t in ts} == {-1.0, 100.0}


def test_split_rewards_single_class():
    ts = [T(i, 0, 0.0, i + 1) for i in range(4)]
    assert len(split_rewards(Partition.trivial(4), ts)) == 1


def test_split_rewards_needs_trivial_partition():
    ts = [T(0, 0, 0.0, 1), T(1, 0, 1.0, 0)]
    with pytest.raises(ContractViolation):
        split_rewards(Partition.singletons(2), ts)


@given(st.lists(st.sampled_from([0.0, 1.0, 10.0, -1.0]), min_size=1, max_size=30))
def test_split_rewards_groups_exactly_by_reward(rewards):
    ts = [T(i, 0, r, i + 1) for i, r in enumerate(rewards)]
    p = split_rewards(Partition.trivial(len(ts)), ts)
    assert len(p) == len(set(rewards))
    assert is_reward_respecting(p, ts)


# -- split -----------------------------------------------------------------


def _proj(mapping):
    return StatePartition(mapping)


def test_split_unchanged_when_all_successors_in_c():
    ts = [T(0, 0, 0.0, 1), T(0, 1, 0.0, 1)]
    p = Partition.trivial(2)
    proj = _proj({0: (0,), 1: (0,)})
    assert split(0, (0,), p, proj, ts) is p


def test_split_respects_block_size_threshold():
    # 5 members: 2 land in c, 3 elsewhere
    ts = [T(0, a, 0.0, 1 if a < 2 else 2) for a in range(5)]
    p = Partition.trivial(5)
    proj = _proj({0: (0,), 1: (1,), 2: (2,)})
    assert split(0, (1,), p, proj, ts, min_size=3) is p
    q = split(0, (1,), p, proj, ts, min_size=2)
    assert sorted(len(m) for m in q.blocks.values()) == [2, 3]


def test_split_separates_pick_from_non_pick(pucks, pucks_experience):
    ts = pucks_experience
    p = split_rewards(Partition.trivial(len(ts)), ts)
    zero = next(b for b in p.ids if ts[p.members(b)[0]].reward == 0.0)
    # state block of hand-full states under the exact projection
    proj = project_exact(p, ts)
    holding = {proj[t.next_state] for t in ts if t.next_state[1] == 1}
    assert len(holding) == 1
    q = split(zero, holding.pop(), p, proj, ts)
    assert len(q) == 3
    for b in set(q.ids) - set(p.ids):
        picks = {ts[i].next_state[1] == 1 and ts[i].state[1] == 0 for i in q.members(b)}
        assert len(picks) == 1


# -- projection through a classifier ---------------------------------------


class _Table:
    """Stub classifier answering from a fixed table."""

    def __init__(self, table):
        self.table = table

    def predict_many(self, s, actions):
        return [self.table[(s, a)] for a in actions]


def test_projection_key_from_predictions():
    ts = [T("s", 0, 0.0, "t")]
    g = _Table({("s", a): (b, 1.0) for a, b in enumerate([1, 1, 1, 3])} |
               {("t", a): (2, 1.0) for a in range(4)})
    proj = project_states(Partition.trivial(1), g, ts, PartitionConfig(), lambda s: range(4))
    assert proj["s"] == (1, 3)
    assert proj.predictions["s"][3] == (3, 3, 1.0)


def test_projection_threshold_drops_predictions():
    ts = [T("s", 0, 0.0, "t")]
    g = _Table({("s", 0): (1, 0.6), ("s", 1): (2, 0.95), ("t", 0): (1, 0.99), ("t", 1): (1, 0.99)})
    cfg = PartitionConfig(confidence_threshold=0.9)
    proj = project_states(Partition.trivial(1), g, ts, cfg, lambda s: range(2))
    assert proj["s"] == (2,)
    full = project_states(Partition.trivial(1), g, ts, PartitionConfig(confidence_threshold=1.0),
                          lambda s: range(2))
    assert full["t"] == ()


def test_terminal_states_skip_the_classifier():
    ts = [T("s", 0, 1.0, "goal", True)]
    g = _Table({("s", 0): (0, 1.0)})
    proj = project_states(Partition.trivial(1), g, ts, PartitionConfig(), lambda s: [0])
    assert proj["goal"] == ()


def test_classifier_failure_becomes_projection_error():
    ts = [T("s", 0, 0.0, "t")]
    g = ExactClassifier().fit([("s", 0)], [0])
    with pytest.raises(ProjectionError):
        project_states(Partition.trivial(1), g, ts, PartitionConfig(), lambda s: [0])


def test_exact_classifier_projection_matches_exact(pucks, pucks_experience):
    ts = pucks_experience
    p = split_rewards(Partition.trivial(len(ts)), ts)
    g = train_classifier(p, ExactClassifier(), ts, PartitionConfig())
    proj = project_states(p, g, ts, PartitionConfig(), pucks.admissible)
    assert proj.blocks == project_exact(p, ts).blocks


# -- training --------------------------------------------------------------


def test_balancing_duplicates_minority():
    ts = [T(i, 0, 0.0 if i < 90 else 1.0, i + 1) for i in range(100)]
    p = split_rewards(Partition.trivial(100), ts)
    _, labels = training_set(p, ts, balance=True)
    assert sorted(Counter(labels).values()) == [90, 90]
    _, labels = training_set(p, ts, balance=False)
    assert sorted(Counter(labels).values()) == [10, 90]


def test_single_block_gives_constant_classifier():
    ts = [T(i, 0, 0.0, i + 1) for i in range(5)]
    g = train_classifier(Partition.trivial(5), make_classifier("knn1", lambda s, a: [s, a]), ts,
                         PartitionConfig())
    assert {g.predict(s, 0) for s in range(10)} == {(0, 1.0)}


def test_tree_memorizes_blocks_world_labels(blocks_model):
    env = BlocksWorld(0, 1, 2)
    ts = blocks_model.to_experience()
    p = model_partition_iteration(blocks_model)
    g = train_classifier(p, make_classifier("tree", env.encode), ts, PartitionConfig())
    pred = [g.predict(t.state, t.action)[0] for t in ts]
    assert pred == p.assignment.tolist()


# -- online partition iteration --------------------------------------------


@pytest.mark.parametrize("kind", ["exact", "knn1", "tree", None])
def test_two_puck_stack_has_three_blocks(pucks, pucks_experience, kind):
    g = None if kind is None else make_classifier(kind, pucks.encode)
    res = online_partition_iteration(pucks_experience, g, PartitionConfig(), pucks.admissible)
    assert res.converged
    assert len(res.partition) == 3
    assert len(res.projection) == 3


def test_single_reward_single_successor_is_immediate_fixed_point():
    ts = [T(s, a, 0.0, 0) for s in range(3) for a in range(2)]
    res = online_partition_iteration(ts, None, PartitionConfig())
    assert len(res.partition) == 1
    assert len(res.trace) == 1


def test_empty_experience_is_rejected():
    with pytest.raises(ContractViolation):
        online_partition_iteration([], None, PartitionConfig())


def test_classifier_needs_admissible():
    with pytest.raises(ContractViolation):
        online_partition_iteration([T(0, 0, 0.0, 1)], ExactClassifier(), PartitionConfig())


@pytest.mark.parametrize("model", random_models(20, seed=0))
def test_online_1nn_matches_oracle(model):
    env = ModelEnv(model)
    ts = model.to_experience()
    res = online_partition_iteration(ts, make_classifier("knn1", env.encode),
                                     PartitionConfig(max_blocks=10_000), env.admissible)
    assert pair_relation(res.partition, ts) == pair_relation(model_partition_iteration(model), ts)


def _history_checks(res, ts):
    for prev, nxt in zip(res.history, res.history[1:]):
        assert is_refinement(nxt, prev)
    if res.converged:
        assert is_reward_respecting(res.partition, ts)
        assert has_ssp(res.partition, ts, project_exact(res.partition, ts))


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.sampled_from(["exact", "knn1", "tree"]))
def test_refinement_chain_and_fixed_point(seed, kind):
    model = random_model(np.random.default_rng(seed))
    env = ModelEnv(model)
    ts = model.to_experience()
    res = online_partition_iteration(ts, make_classifier(kind, env.encode),
                                     PartitionConfig(max_blocks=10_000), env.admissible)
    _history_checks(res, ts)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 6))
def test_block_count_never_exceeds_limit(seed, limit):
    model = random_model(np.random.default_rng(seed), max_states=8, rewards=(0.0, 1.0, 2.0))
    ts = model.to_experience()
    res = online_partition_iteration(ts, None, PartitionConfig(max_blocks=limit))
    n_rewards = len({t.reward for t in ts})
    if n_rewards > limit:
        # reward classes are never merged, so the run stops at the reward split
        assert OVER_SEGMENTED in res.flags
        assert all(len(p) == n_rewards for p in res.history)
    else:
        assert all(len(p) <= limit + 1 for p in res.history)
    if len(model_partition_iteration(model)) > limit:
        assert OVER_SEGMENTED in res.flags
    for prev, nxt in zip(res.history, res.history[1:]):
        assert is_refinement(nxt, prev)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000))
def test_exact_classifier_equals_ground_truth_projection(seed):
    model = random_model(np.random.default_rng(seed))
    env = ModelEnv(model)
    ts = model.to_experience()
    a = online_partition_iteration(ts, ExactClassifier(), PartitionConfig(max_blocks=10_000), env.admissible)
    b = online_partition_iteration(ts, None, PartitionConfig(max_blocks=10_000))
    assert a.partition == b.partition


def test_runs_are_deterministic(pucks, pucks_experience):
    runs = [online_partition_iteration(pucks_experience, make_classifier("tree", pucks.encode),
                                       PartitionConfig(), pucks.admissible) for _ in range(2)]
    assert runs[0].partition == runs[1].partition
    assert runs[0].trace_lines() == runs[1].trace_lines()


def test_trace_records_are_json_lines(pucks, pucks_experience):
    res = online_partition_iteration(pucks_experience, None, PartitionConfig())
    rows = [json.loads(line) for line in res.trace_lines().splitlines()]
    assert [r["iteration"] for r in rows] == list(range(1, len(rows) + 1))
    assert set(rows[0]) == {"iteration", "blocks", "state_blocks", "splits", "flags"}
    assert rows[-1]["blocks"] == 3


def test_blocks_world_matches_oracle_with_tree(blocks_model):
    env = BlocksWorld(0, 1, 2)
    ts = blocks_model.to_experience()
    res = online_partition_iteration(ts, make_classifier("tree", env.encode),
                                     PartitionConfig(max_blocks=100), env.admissible)
    assert pair_relation(res.partition, ts) == pair_relation(model_partition_iteration(blocks_model), ts)
