import numpy as np
import pytest
from hypothesis import given, strategies as st

from _gen import random_record, random_ruleset
from seqrules.data import SynthConfig, synthesize
from seqrules.engine import constrain_record
from seqrules.grouping import (
    NO_RULE, apply_group_batch, apply_program_batch, build_group, compile_program, fired_cells,
)
from seqrules.miner import mine_all
from seqrules.neuron import Mode, activation_sum, apply_consequent
from seqrules.oracle import apply_rules_naive
from seqrules.rules import ALL_PAST, STATIC, InvalidRuleSet, Literal, Rule, RuleSet, TemporalComponent
from seqrules.temporal import aggregate_history, build_mask_matrix


def test_reader_of_a_group_output_starts_a_new_group():
    rs = RuleSet((
        Rule("r1", 2, 1.0, (Literal.cur(0),)),
        Rule("r2", 5, 0.0, (Literal.cur(1),)),
        Rule("r3", 7, 1.0, (Literal.cur(2),)),
    ), 8)
    prog = compile_program(rs)
    assert [g.rule_ids for g in prog.groups] == [["r1", "r2"], ["r3"]]


def test_different_temporal_components_are_never_grouped():
    rs = RuleSet((
        Rule("a", 2, 1.0, (Literal.past(0),), TemporalComponent.of(-1)),
        Rule("b", 3, 1.0, (Literal.past(0),), TemporalComponent.of(1)),
    ), 4)
    prog = compile_program(rs)
    assert len(prog.groups) == 2
    assert {g.temporal for g in prog.groups} == {TemporalComponent.of(-1), TemporalComponent.of(1)}


def test_group_matrix_layout():
    C = 6
    g = build_group(STATIC, [Rule("x", 4, 0.0, (Literal.cur(1), ~Literal.cur(2)))], C)
    assert g.W.shape == (2 * C, C)
    assert g.W[C + 1, 4] == 1 and g.W[C + 2, 4] == -1
    assert g.theta_vec.tolist() == [NO_RULE] * 4 + [1, NO_RULE]
    assert g.has_rule.tolist() == [False] * 4 + [True, False]


def test_invalid_program_is_rejected():
    with pytest.raises(InvalidRuleSet):
        compile_program(RuleSet((Rule("s", 1, 1.0, (Literal.cur(1),)),), 3))


def test_program_group_invariants():
    rng = np.random.default_rng(0)
    for _ in range(30):
        rs = random_ruleset(rng, 30, 50)
        prog = compile_program(rs)
        ids = [rid for g in prog.groups for rid in g.rule_ids]
        assert sorted(ids) == sorted(r.id for r in rs)
        for g in prog.groups:
            outs = g.outputs
            assert len(set(outs)) == len(outs)
            for k, n in enumerate(g.members):
                cur = set(np.flatnonzero(n.weights[30:]).tolist())
                assert not cur & set(outs[:k])


def test_always_fire_column():
    g = build_group(STATIC, [Rule("on", 4, 1.0)], 6)
    out = apply_group_batch(np.zeros((5, 6), dtype=np.uint8), g)
    assert out[:, 4].all() and out.sum() == 5


def test_group_without_rules_changes_nothing():
    g = build_group(ALL_PAST, [], 6)
    P = random_record(np.random.default_rng(1), 7, 6)
    assert np.array_equal(apply_group_batch(P, g), P)


def _per_step_group(P, group, rng=None):
    """Per-step neuron evaluation of one group on inputs ``P`` (no chaining inside a group)."""
    T, C = P.shape
    M = build_mask_matrix(group.temporal, T)
    out = P.copy()
    for t in range(T):
        x = np.concatenate([aggregate_history(P, M[t]), P[t]])
        for n in group.members:
            s = activation_sum(n, x)
            out[t] = apply_consequent(n, s, out[t], Mode.GENERATE, rng)
    return out


@given(st.integers(0, 2**31))
def test_single_group_batch_equals_per_step_neurons(seed):
    rng = np.random.default_rng(seed)
    C, T = 24, 16
    rs = random_ruleset(rng, C, 12)
    prog = compile_program(rs)
    P = random_record(rng, T, C)
    for g in prog.groups:
        assert np.array_equal(apply_group_batch(P, g), _per_step_group(P, g))


@given(st.integers(0, 2**31))
def test_kernel_and_sparse_routes_agree(seed):
    rng = np.random.default_rng(seed)
    C = int(rng.integers(2, 40))
    prog = compile_program(random_ruleset(rng, C, 20))
    X = (rng.random((3, int(rng.integers(1, 20)), C)) < 0.3).astype(np.uint8)
    for g in prog.groups:
        assert np.array_equal(fired_cells(X, g), fired_cells(X, g, method="sparse"))


def test_program_matches_sequential_oracle_on_records():
    rng = np.random.default_rng(42)
    rs = random_ruleset(rng, 30, 50)
    prog = compile_program(rs)
    for _ in range(100):
        T = int(rng.integers(1, 20))
        P = random_record(rng, T, 30)
        probs = rng.random((T, 30))
        assert np.array_equal(
            apply_program_batch(probs, prog, Mode.TRAIN_PROB, labels=P),
            apply_rules_naive(probs, rs, Mode.TRAIN_PROB, labels=P),
        )
        expected = apply_rules_naive(P, rs)
        assert np.array_equal(constrain_record(P, prog), expected)
        assert np.array_equal(constrain_record(P, prog, by_group=True), expected)


def test_soft_rules_follow_the_oracle_stream():
    rng = np.random.default_rng(9)
    for k in range(50):
        rs = random_ruleset(rng, 12, 15, soft_rate=0.4)
        prog = compile_program(rs)
        P = random_record(rng, 10, 12)
        a = constrain_record(P, prog, np.random.default_rng(k))
        b = apply_rules_naive(P, rs, rng=np.random.default_rng(k))
        assert np.array_equal(a, b)


def test_soft_group_batch_draw_shape_is_deterministic():
    g = build_group(STATIC, [Rule("s", 1, 0.5)], 3)
    P = np.zeros((2, 40, 3), dtype=np.uint8)
    a = apply_group_batch(P, g, rng=np.random.default_rng(0))
    b = apply_group_batch(P, g, rng=np.random.default_rng(0))
    assert np.array_equal(a, b)
    assert 0.3 < a[..., 1].mean() < 0.7
    with pytest.raises(ValueError):
        apply_group_batch(P, g)


def test_train_mode_requires_labels():
    g = build_group(STATIC, [Rule("on", 1, 1.0)], 3)
    with pytest.raises(ValueError):
        apply_group_batch(np.zeros((2, 3)), g, Mode.TRAIN_PROB)
    with pytest.raises(ValueError):
        apply_group_batch(np.zeros((2, 4)), g)


def test_mined_programs_are_idempotent():
    records, meta = synthesize(SynthConfig(n_records=600, seed=3))
    rs = mine_all(records, meta.demographic_groups)
    prog = compile_program(rs)
    rng = np.random.default_rng(0)
    for _ in range(20):
        P = random_record(rng, 8, rs.vocab_size, density=0.2)
        once = constrain_record(P, prog)
        assert np.array_equal(constrain_record(once, prog), once)
        assert np.array_equal(apply_program_batch(once, prog, rng=rng), once)


def test_describe_lists_weights():
    prog = compile_program(RuleSet((Rule("x", 2, 0.0, (~Literal.past(0),), ALL_PAST),), 3))
    text = prog.describe()
    assert "GROUP 0 temporal={*} rules=x" in text
    assert "W past[0] -> 2 : -1" in text
    assert "code 2: theta=0 alpha=0.0" in text
