import numpy as np
import pytest
from hypothesis import given, strategies as st

from _gen import random_cnf, random_ruleset, truth_table_agreement
from seqrules.dsl import (
    CnfExpr, CnfVar, DslSyntaxError, cnf_to_cif, format_rule, parse_cnf, parse_rules,
    read_vocab_names, serialize_cnf, serialize_rules,
)
from seqrules.oracle import Status, eval_rule_naive
from seqrules.rules import ALL_PAST, Literal, Rule, RuleSet, Scope, TemporalComponent

R1 = "RULE r1 WHEN past[*][5] AND cur[9] AND NOT cur[3] THEN 12 = 1.0"


def test_parse_r1_example():
    rs = parse_rules("VOCAB 20\n" + R1)
    (r,) = rs.rules
    assert r.id == "r1"
    assert r.temporal == ALL_PAST
    assert r.antecedent == (Literal.past(5), Literal.cur(9), ~Literal.cur(3))
    assert r.output_code == 12 and r.alpha == 1.0


def test_empty_antecedent_rule():
    (r,) = parse_rules("VOCAB 5\nRULE r2 THEN 4 = 0.0").rules
    assert r.antecedent == () and r.output_code == 4 and r.alpha == 0.0


def test_alpha_out_of_range_is_an_error():
    with pytest.raises(DslSyntaxError) as exc:
        parse_rules("VOCAB 10\nRULE bad WHEN cur[9] THEN 9 = 1.5")
    assert exc.value.line == 2


@pytest.mark.parametrize("text, line", [
    ("RULE a THEN 1 = 1", 1),
    ("VOCAB 3\nRULE a THEN 3 = 1", 2),
    ("VOCAB 3\nRULE a WHEN cur[1] THEN", 2),
    ("VOCAB 3\nRULE a WHEN past[0][1] THEN 2 = 1", 2),
    ("VOCAB 3\nVOCAB 4", 2),
    ("# only a comment\n", 1),
    ("VOCAB 3\nRULE a WHEN cur[1] OR cur[2] THEN 0 = 1", 2),
])
def test_syntax_errors_carry_line_numbers(text, line):
    with pytest.raises(DslSyntaxError) as exc:
        parse_rules(text)
    assert exc.value.line == line
    assert exc.value.col >= 1


def test_comments_and_blank_lines_are_ignored():
    rs = parse_rules("# header\nVOCAB 4\n\nRULE a THEN 1 = 1.0  # trailing\n")
    assert len(rs) == 1


def test_union_of_past_selectors_forms_the_temporal_component():
    (r,) = parse_rules("VOCAB 9\nRULE u WHEN past[-1][2] AND NOT past[1,4][3] THEN 5 = 1").rules
    assert r.temporal == TemporalComponent.of(-1, 1, 4)


def test_format_rule_is_canonical():
    (r,) = parse_rules("VOCAB 20\n" + R1).rules
    assert format_rule(r) == R1


def test_round_trip_r1():
    rs = parse_rules("VOCAB 20\n" + R1)
    assert parse_rules(serialize_rules(rs)) == rs


def test_empty_ruleset_serializes_to_vocab_only():
    assert serialize_rules(RuleSet((), 10)).strip() == "VOCAB 10"


def test_small_alpha_round_trips_exactly():
    rs = RuleSet((Rule("s", 1, 0.01, (Literal.cur(0),)),), 3)
    text = serialize_rules(rs)
    assert "0.01" in text
    assert parse_rules(text).rules[0].alpha == 0.01


@given(st.integers(0, 100_000), st.integers(1, 40), st.integers(0, 25))
def test_parse_serialize_identity(seed, C, n):
    rs = random_ruleset(np.random.default_rng(seed), C, n, soft_rate=0.3)
    assert parse_rules(serialize_rules(rs)) == rs


@given(st.floats(0.0, 1.0, allow_nan=False))
def test_any_alpha_round_trips(alpha):
    rs = RuleSet((Rule("a", 0, alpha),), 1)
    assert parse_rules(serialize_rules(rs)).rules[0].alpha == alpha


def test_vocab_sidecar(tmp_path):
    p = tmp_path / "names.txt"
    p.write_text("# names\n0 male\n1 female\n")
    assert read_vocab_names(p) == {"male": 0, "female": 1}


# --- CNF -> CIF ---------------------------------------------------------------

def _cur_vars(n):
    return {f"x{i}": CnfVar(f"x{i}", Scope.CURRENT, i) for i in range(1, n + 1)}


def test_two_literal_clause():
    (r,) = cnf_to_cif(CnfExpr(((("x1", False), ("x2", False)),), _cur_vars(2)))
    assert r.antecedent == (~Literal.cur(1),)
    assert r.output_code == 2 and r.alpha == 1.0


def test_unit_clause_is_an_empty_antecedent_rule():
    (r,) = cnf_to_cif(CnfExpr(((("x3", False),),), _cur_vars(3)))
    assert r.antecedent == () and r.output_code == 3 and r.alpha == 1.0


def test_negated_consequent_over_all_assignments():
    expr = CnfExpr(((("x1", True), ("x2", True)),), _cur_vars(2))
    (r,) = cnf_to_cif(expr)
    assert r.antecedent == (Literal.cur(1),) and r.output_code == 2 and r.alpha == 0.0
    for a in range(2):
        for b in range(2):
            visit = np.zeros((1, 3), dtype=np.uint8)
            visit[0, 1], visit[0, 2] = a, b
            clause = (not a) or (not b)
            assert clause == (eval_rule_naive(visit, r, 1) is not Status.VIOLATED)


def test_unmapped_variable_is_an_error():
    with pytest.raises(KeyError):
        cnf_to_cif(CnfExpr(((("ghost", False),),), _cur_vars(1)))


def test_history_last_literal_falls_back_to_last_current():
    vars_ = {
        "a": CnfVar("a", Scope.CURRENT, 0),
        "h": CnfVar("h", Scope.HISTORY, 1, TemporalComponent.of(-1)),
    }
    (r,) = cnf_to_cif(CnfExpr(((("a", False), ("h", False)),), vars_))
    assert r.output_code == 0 and r.antecedent == (~Literal.past(1),)
    assert r.temporal == TemporalComponent.of(-1)


def test_history_only_clause_is_rejected():
    vars_ = {"h": CnfVar("h", Scope.HISTORY, 1, ALL_PAST)}
    with pytest.raises(ValueError):
        cnf_to_cif(CnfExpr(((("h", False),),), vars_))


def test_cnf_text_round_trip():
    text = "VOCAB 6\nVAR a cur 0\nVAR b past[-1] 2\nCLAUSE +a -b\nCLAUSE -a\n"
    expr = parse_cnf(text)
    assert parse_cnf(serialize_cnf(expr)) == expr
    rules = cnf_to_cif(expr)
    assert [r.id for r in rules] == ["c1", "c2"]


def test_cnf_syntax_errors():
    with pytest.raises(DslSyntaxError):
        parse_cnf("VAR a sideways 1\nCLAUSE +a")
    with pytest.raises(DslSyntaxError):
        parse_cnf("VAR a cur 1\n")


@given(st.integers(0, 2**32 - 1))
def test_cnf_conversion_equivalence_random(seed):
    n, clauses = random_cnf(np.random.default_rng(seed))
    assert truth_table_agreement(n, clauses)


def test_cnf_conversion_handles_tautologies_and_repeats():
    assert truth_table_agreement(2, [[(0, False), (0, True)], [(1, False), (1, False)]])


def test_mixed_scope_cnf_equivalence():
    rng = np.random.default_rng(7)
    tc = TemporalComponent.of(1)
    for _ in range(100):
        n_cur, n_hist = int(rng.integers(1, 5)), int(rng.integers(0, 4))
        vars_ = {f"c{i}": CnfVar(f"c{i}", Scope.CURRENT, i) for i in range(n_cur)}
        vars_.update({f"h{i}": CnfVar(f"h{i}", Scope.HISTORY, i, tc) for i in range(n_hist)})
        names = list(vars_)
        clauses = []
        for _ in range(int(rng.integers(1, 5))):
            lits = [(str(rng.choice(names)), bool(rng.integers(2))) for _ in range(int(rng.integers(0, 3)))]
            lits.append((f"c{rng.integers(n_cur)}", bool(rng.integers(2))))
            rng.shuffle(lits)
            if all(vars_[n].scope is Scope.HISTORY for n, _ in lits):
                continue
            clauses.append(tuple(lits))
        if not clauses:
            continue
        rules = cnf_to_cif(CnfExpr(tuple(clauses), vars_))
        C = max(n_cur, n_hist, 1)
        for bits in range(2 ** (n_cur + n_hist)):
            P = np.zeros((2, C), dtype=np.uint8)
            val = {}
            for i, name in enumerate(names):
                b = (bits >> i) & 1
                val[name] = bool(b)
                v = vars_[name]
                P[1 if v.scope is Scope.CURRENT else 0, v.code] = b
            cnf = all(any(val[n] != neg for n, neg in c) for c in clauses)
            fine = all(eval_rule_naive(P, r, 2) is not Status.VIOLATED for r in rules)
            assert cnf == fine
