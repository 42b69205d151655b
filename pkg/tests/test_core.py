import itertools
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from mdphom.core import (
    ContractViolation,
    ExperienceBuffer,
    GroundMDPModel,
    InconsistentPartition,
    Partition,
    QuotientMDP,
    Transition,
    block_transition,
    build_quotient,
    check_homomorphism,
    has_ssp,
    is_refinement,
    is_reward_respecting,
    make_key,
    pair_relation,
    project_exact,
)
from mdphom.envs import chain_model
from mdphom.oracle import model_partition_iteration
from mdphom.partitioning import PartitionConfig, online_partition_iteration, split_rewards

from conftest import random_models

labels_st = st.lists(st.integers(0, 4), min_size=1, max_size=40)


def T(s, a, r, s2, done=False):
    return Transition(s, a, r, s2, done)


# -- experience ------------------------------------------------------------


def test_buffer_is_fifo_at_capacity():
    buf = ExperienceBuffer(3)
    for i in range(5):
        buf.append(T(i, 0, 0.0, i + 1))
    assert len(buf) == 3
    assert [t.state for t in buf] == [2, 3, 4]


@pytest.mark.parametrize("bad", [math.nan, math.inf, -math.inf])
def test_buffer_rejects_non_finite_reward(bad):
    with pytest.raises(ContractViolation):
        ExperienceBuffer(2).append(T(0, 0, bad, 1))


def test_buffer_capacity_must_be_positive():
    with pytest.raises(ContractViolation):
        ExperienceBuffer(0)


# -- partitions ------------------------------------------------------------


@given(labels_st)
def test_from_labels_is_a_disjoint_cover(labels):
    p = Partition.from_labels(labels)
    p.check()
    assert len(p) == len(set(labels))
    assert sum(len(m) for m in p.blocks.values()) == len(labels)


@given(labels_st, st.data())
def test_split_mints_fresh_ids_and_refines(labels, data):
    p = Partition.from_labels(labels)
    b = data.draw(st.sampled_from(p.ids))
    members = p.members(b)
    if len(members) < 2:
        return
    cut = data.draw(st.integers(1, len(members) - 1))
    q = p.split_block(b, members[:cut], members[cut:])
    q.check()
    assert b not in q
    assert set(q.ids) - set(p.ids) == {p.next_id, p.next_id + 1}
    assert is_refinement(q, p)
    assert not is_refinement(p, q)


@given(labels_st)
def test_refinement_is_reflexive_and_bounded(labels):
    p = Partition.from_labels(labels)
    n = len(labels)
    assert is_refinement(p, p)
    assert is_refinement(Partition.singletons(n), p)
    assert is_refinement(p, Partition.trivial(n))


@given(labels_st, labels_st)
def test_refinement_antisymmetric_up_to_relabeling(a, b):
    n = min(len(a), len(b))
    p, q = Partition.from_labels(a[:n]), Partition.from_labels(b[:n])
    if is_refinement(p, q) and is_refinement(q, p):
        assert p.relation() == q.relation()


@given(labels_st, st.data())
def test_refinement_is_transitive_on_chains(labels, data):
    chain = [Partition.trivial(len(labels))]
    for _ in range(3):
        p = chain[-1]
        b = data.draw(st.sampled_from(p.ids))
        m = p.members(b)
        if len(m) > 1:
            chain.append(p.split_block(b, m[:1], m[1:]))
    for i, j in itertools.combinations(range(len(chain)), 2):
        assert is_refinement(chain[j], chain[i])


def test_refinement_examples():
    assert is_refinement(Partition.singletons(4), Partition.trivial(4))
    assert not is_refinement(Partition.trivial(4), Partition.from_labels([0, 0, 1, 1]))
    with pytest.raises(ContractViolation):
        is_refinement(Partition.trivial(3), Partition.trivial(4))


@pytest.mark.parametrize("blocks", [
    {0: [0, 1], 1: [1, 2]},  # overlap
    {0: [0, 2]},  # gap
    {0: [0, 1], 1: []},  # empty block
])
def test_broken_covers_are_rejected(blocks):
    with pytest.raises(ContractViolation):
        Partition(blocks)


def test_partition_json_roundtrip():
    p = Partition.from_labels([3, 1, 3, 2])
    q = p.split_block(p.block_of(0), [0], [2])
    assert Partition.from_json(q.to_json()) == q


@given(st.lists(st.integers(0, 20), max_size=8))
def test_state_block_key_is_canonical(blocks):
    assert make_key(blocks) == make_key(reversed(blocks)) == tuple(sorted(set(blocks)))


# -- block transition ------------------------------------------------------


def test_block_transition_on_chain():
    m = chain_model(4)
    assert block_transition(m, 0, 1, {1}) == 1.0
    assert block_transition(m, 0, 1, {0}) == 0.0
    with pytest.raises(ContractViolation):
        block_transition(m, 3, 0, {0})


@pytest.mark.parametrize("model", random_models(10, seed=5, max_states=5))
def test_block_transition_matches_brute_force(model):
    rng = np.random.default_rng(0)
    labels = rng.integers(0, 3, size=len(model.states))
    blocks = [{s for s, lab in zip(model.states, labels) if lab == k} for k in range(3)]
    for s, a in model.pairs():
        for c in blocks:
            expected = sum(1.0 for s2 in model.states if s2 in c and model.next_state[(s, a)] == s2)
            assert block_transition(model, s, a, c) == expected


# -- projection ------------------------------------------------------------


def test_single_block_projection_shares_one_key():
    ts = [T(0, 0, 0.0, 1), T(1, 0, 0.0, 0), T(0, 1, 0.0, 0)]
    proj = project_exact(Partition.trivial(3), ts)
    assert proj[0] == proj[1] == (0,)


def test_terminal_states_get_empty_key():
    ts = [T(0, 0, 1.0, 1, True)]
    proj = project_exact(Partition.trivial(1), ts)
    assert proj[1] == ()
    assert len(proj) == 2


@pytest.mark.parametrize("model", random_models(10, seed=7))
def test_projection_matches_brute_force(model):
    ts = model.to_experience()
    rng = np.random.default_rng(1)
    p = Partition.from_labels(rng.integers(0, 3, size=len(ts)).tolist())
    proj = project_exact(p, ts)
    for s in {t.state for t in ts} | {t.next_state for t in ts}:
        expected = tuple(sorted({int(p.block_of(i)) for i, t in enumerate(ts) if t.state == s}))
        assert proj[s] == expected


@pytest.mark.parametrize("model", random_models(20, seed=2))
def test_projection_bound(model):
    # a key is a non-empty set of at most |A| blocks, plus the empty key;
    # this is 2**|B| - 1 + 1 once |A| >= |B|
    ts = model.to_experience()
    p = model_partition_iteration(model)
    n_actions = 1 + max(t.action for t in ts)
    bound = sum(math.comb(len(p), k) for k in range(1, min(len(p), n_actions) + 1)) + 1
    assert len(project_exact(p, ts)) <= bound
    if n_actions >= len(p):
        assert bound == 2 ** len(p)


# -- predicates ------------------------------------------------------------


def test_reward_respecting_examples(pucks_experience):
    ts = pucks_experience
    assert is_reward_respecting(split_rewards(Partition.trivial(len(ts)), ts), ts)
    assert not is_reward_respecting(Partition.trivial(len(ts)), ts)
    assert is_reward_respecting(Partition.singletons(len(ts)), ts)


def test_ssp_detects_split_successors():
    ts = [T(0, 0, 0.0, 1), T(0, 1, 0.0, 2, True), T(1, 0, 0.0, 0)]
    p = Partition.trivial(3)
    assert not has_ssp(p, ts, project_exact(p, ts))


@pytest.mark.parametrize("model", random_models(10, seed=3))
def test_oracle_partition_is_reward_respecting_ssp(model):
    ts = model.to_experience()
    p = model_partition_iteration(model)
    assert is_reward_respecting(p, ts)
    assert has_ssp(p, ts, project_exact(p, ts))


# -- quotient --------------------------------------------------------------


def _fig1_quotient(pucks_experience):
    p = online_partition_iteration(pucks_experience, None, PartitionConfig()).partition
    proj = project_exact(p, pucks_experience)
    return p, proj, build_quotient(p, pucks_experience, proj)


def test_two_puck_quotient_shape(pucks_experience):
    p, proj, q = _fig1_quotient(pucks_experience)
    assert len(p) == 3
    assert len(q) == 3
    assert q.n_actions == 4
    assert sorted(len(a) for a in q.actions) == [0, 2, 2]


def test_single_transition_quotient():
    q = build_quotient(Partition.trivial(1), [T(0, 0, 2.5, 1, True)],
                       project_exact(Partition.trivial(1), [T(0, 0, 2.5, 1, True)]))
    assert len(q) == 2 and q.n_actions == 1
    assert q.terminal == frozenset({q.index[()]})
    assert q.reward[(q.index[(0,)], 0)] == 2.5


def test_quotient_rejects_inconsistent_cells():
    ts = [T(0, 0, 0.0, 1), T(0, 1, 0.0, 2, True), T(1, 0, 0.0, 0)]
    p = Partition.trivial(3)
    with pytest.raises(InconsistentPartition):
        build_quotient(p, ts, project_exact(p, ts))


def test_quotient_json_roundtrip(pucks_experience):
    _, _, q = _fig1_quotient(pucks_experience)
    assert QuotientMDP.from_json(q.to_json()) == q


def test_quotient_rows_are_deterministic(pucks_experience):
    _, _, q = _fig1_quotient(pucks_experience)
    for i, key in enumerate(q.states):
        for b in key:
            assert isinstance(q.transition[(i, b)], int)


def _maps(model, p, proj, q):
    ts = model.to_experience()
    f = {s: q.index[proj.key_of.get(s, ())] for s in model.states}  # unreached terminals: empty key
    g = {(t.state, t.action): int(p.block_of(i)) for i, t in enumerate(ts)}
    return f, g


@pytest.mark.parametrize("model", random_models(20, seed=11))
def test_oracle_quotient_is_homomorphic_image(model):
    ts = model.to_experience()
    p = model_partition_iteration(model)
    proj = project_exact(p, ts)
    q = build_quotient(p, ts, proj)
    assert check_homomorphism(model, q, *_maps(model, p, proj, q))


def test_fig1_mapping_is_homomorphism(pucks_model):
    ts = pucks_model.to_experience()
    p = model_partition_iteration(pucks_model)
    proj = project_exact(p, ts)
    q = build_quotient(p, ts, proj)
    assert check_homomorphism(pucks_model, q, *_maps(pucks_model, p, proj, q))


def test_identity_homomorphism():
    m = chain_model(4)
    ts = m.to_experience()
    p = Partition.singletons(len(ts))
    proj = project_exact(p, ts)
    q = build_quotient(p, ts, proj)
    assert len(q) == len(m.states)
    assert check_homomorphism(m, q, *_maps(m, p, proj, q))


def test_merging_goal_and_non_goal_breaks_homomorphism():
    m = chain_model(4)
    ts = m.to_experience()
    p = model_partition_iteration(m)
    proj = project_exact(p, ts)
    q = build_quotient(p, ts, proj)
    f, g = _maps(m, p, proj, q)
    goal_pair = next((s, a) for s, a in m.pairs() if m.reward[(s, a)] > 0)
    other = next(pair for pair in m.pairs() if m.reward[pair] == 0)
    g[goal_pair] = g[other]
    assert not check_homomorphism(m, q, f, g)


def test_pair_relation_ignores_block_ids():
    ts = [T(0, 0, 0.0, 1), T(1, 0, 0.0, 0)]
    a = Partition.from_labels([0, 1])
    b = Partition.from_labels([7, 3])
    assert pair_relation(a, ts) == pair_relation(b, ts)


def test_ground_model_experience_is_canonical():
    m = GroundMDPModel([0, 1], {0: (0,), 1: ()}, {(0, 0): 1}, {(0, 0): 1.0}, frozenset({1}))
    assert m.to_experience() == [T(0, 0, 1.0, 1, True)]
