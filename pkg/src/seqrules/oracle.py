"""Slow, direct reference semantics used as ground truth by the tests.

Nothing here uses the compiled machinery: literals are evaluated by walking
the referenced visits, and rules are applied one at a time.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .neuron import Mode
from .rules import Rule, RuleSet, Scope
from .temporal import resolve_indices


class Status(enum.Enum):
    SATISFIED = "satisfied"
    VIOLATED = "violated"
    NOT_APPLICABLE = "n/a"


def antecedent_holds(P: np.ndarray, rule: Rule, t: int) -> bool:
    past = resolve_indices(rule.temporal, t)
    for lit in rule.antecedent:
        if lit.scope is Scope.CURRENT:
            value = bool(P[t - 1][lit.code])
        else:
            value = any(P[i - 1][lit.code] for i in past)
        if value == lit.negated:
            return False
    return True


def eval_rule_naive(record, rule: Rule, t: int) -> Status:
    P = np.asarray(record)
    if not 1 <= t <= P.shape[0]:
        raise ValueError(f"step {t} outside [1, {P.shape[0]}]")
    if not antecedent_holds(P, rule, t):
        return Status.NOT_APPLICABLE
    bit = int(P[t - 1][rule.output_code])
    if (rule.alpha == 1.0 and bit == 0) or (rule.alpha == 0.0 and bit == 1):
        return Status.VIOLATED
    return Status.SATISFIED


@dataclass
class RuleTally:
    rule_id: str
    temporal: bool
    alpha: float
    violations: int = 0
    fired: int = 0
    fired_ones: int = 0

    @property
    def kind(self) -> str:
        return "temporal" if self.temporal else "static"

    @property
    def hard(self) -> bool:
        return self.alpha in (0.0, 1.0)


@dataclass
class ViolationReport:
    tallies: list[RuleTally] = field(default_factory=list)
    n_records: int = 0
    n_valid: int = 0

    @property
    def static(self) -> int:
        return sum(r.violations for r in self.tallies if not r.temporal)

    @property
    def temporal(self) -> int:
        return sum(r.violations for r in self.tallies if r.temporal)

    @property
    def total(self) -> int:
        return self.static + self.temporal

    @property
    def pct_valid(self) -> float:
        return 100.0 if self.n_records == 0 else 100.0 * self.n_valid / self.n_records

    def per_rule(self) -> dict[str, int]:
        return {r.rule_id: r.violations for r in self.tallies}

    def to_text(self) -> str:
        lines = [
            f"records {self.n_records}",
            f"valid_records {self.n_valid}",
            f"pct_valid {self.pct_valid:.4f}",
            f"static_violations {self.static}",
            f"temporal_violations {self.temporal}",
        ]
        for r in self.tallies:
            line = f"rule {r.rule_id} {r.kind} violations {r.violations} fired {r.fired}"
            if not r.hard:
                freq = r.fired_ones / r.fired if r.fired else float("nan")
                line += f" alpha {r.alpha!r} observed {freq:.6f}"
            lines.append(line)
        return "\n".join(lines) + "\n"

    def same_counts(self, other: "ViolationReport") -> bool:
        key = lambda rep: [(r.rule_id, r.violations, r.fired, r.fired_ones) for r in rep.tallies]
        return (self.n_records, self.n_valid) == (other.n_records, other.n_valid) and key(self) == key(other)


def check_violations(dataset: Iterable, rules: RuleSet) -> ViolationReport:
    report = ViolationReport([RuleTally(r.id, r.is_temporal, r.alpha) for r in rules])
    for record in dataset:
        P = np.asarray(record)
        clean = True
        for t in range(1, P.shape[0] + 1):
            for tally, rule in zip(report.tallies, rules):
                status = eval_rule_naive(P, rule, t)
                if status is Status.NOT_APPLICABLE:
                    continue
                tally.fired += 1
                tally.fired_ones += int(P[t - 1][rule.output_code])
                if status is Status.VIOLATED:
                    tally.violations += 1
                    clean = False
        report.n_records += 1
        report.n_valid += clean
    return report


def sequential_order(rules: Sequence[Rule]) -> list[int]:
    """Evaluation order: writers of a code before its current-visit readers,
    same-code writers in file order, otherwise file order."""
    n = len(rules)

    def must_precede(a: int, b: int) -> bool:
        ra, rb = rules[a], rules[b]
        reads = any(l.scope is Scope.CURRENT and l.code == ra.output_code for l in rb.antecedent)
        return reads or (ra.output_code == rb.output_code and a < b)

    done: list[int] = []
    left = list(range(n))
    while left:
        for b in left:
            if not any(must_precede(a, b) for a in left if a != b):
                done.append(b)
                left.remove(b)
                break
        else:
            raise ValueError("rules contain a current-visit dependency cycle")
    return done


def apply_rules_naive(
    record,
    rules: RuleSet,
    mode: Mode = Mode.GENERATE,
    rng: np.random.Generator | None = None,
    labels=None,
) -> np.ndarray:
    """One rule at a time, one step at a time.

    GENERATE: the record is updated in place as we go, so later steps (and
    later rules at the same step) see earlier overrides.  When any rule is soft,
    each step first draws ``u = rng.random(C)`` and a fired rule on code ``j``
    sets ``u[j] < alpha``.
    TRAIN_PROB: ``record`` is a probability matrix; inputs come from ``labels``.
    """
    order = sequential_order(rules.rules)
    if mode is Mode.TRAIN_PROB:
        out = np.array(record, dtype=np.float64, copy=True)
        L = np.asarray(labels)
        for t in range(1, L.shape[0] + 1):
            for i in order:
                r = rules[i]
                if antecedent_holds(L, r, t):
                    out[t - 1, r.output_code] = r.alpha
        return out
    out = np.array(record, dtype=np.uint8, copy=True)
    soft = rules.has_soft
    for t in range(1, out.shape[0] + 1):
        u = rng.random(rules.vocab_size) if soft else None
        for i in order:
            r = rules[i]
            if antecedent_holds(out, r, t):
                if u is None:
                    out[t - 1, r.output_code] = int(r.alpha)
                else:
                    out[t - 1, r.output_code] = int(u[r.output_code] < r.alpha)
    return out
