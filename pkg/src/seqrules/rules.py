"""Core domain types for records and the rules that constrain them.

Code indices are 0-based; visit time steps are 1-based (``t = 1`` is the first
visit, which by convention is the demographic "label visit").
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Sequence

import networkx as nx
import numpy as np


class Scope(enum.Enum):
    HISTORY = "past"
    CURRENT = "cur"


@dataclass(frozen=True, eq=False)
class Record:
    """A sequence of visits stored as a read-only ``T x vocab_size`` uint8 matrix."""

    visits: np.ndarray
    vocab_size: int

    def __post_init__(self) -> None:
        if self.vocab_size < 1:
            raise ValueError(f"vocab_size must be positive, got {self.vocab_size}")
        arr = np.asarray(self.visits)
        if arr.size == 0:
            arr = np.zeros((0, self.vocab_size), dtype=np.uint8)
        if arr.ndim != 2 or arr.shape[1] != self.vocab_size:
            raise ValueError(
                f"visits must have shape (T, {self.vocab_size}), got {arr.shape}"
            )
        if not np.isin(arr, (0, 1)).all():
            raise ValueError("visit entries must be 0 or 1")
        arr = arr.astype(np.uint8, copy=True)
        arr.flags.writeable = False
        object.__setattr__(self, "visits", arr)

    @classmethod
    def from_codes(cls, visits: Iterable[Iterable[int]], vocab_size: int) -> "Record":
        rows = [list(v) for v in visits]
        arr = np.zeros((len(rows), vocab_size), dtype=np.uint8)
        for t, codes in enumerate(rows):
            for c in codes:
                if not 0 <= c < vocab_size:
                    raise ValueError(f"code {c} outside vocabulary of size {vocab_size}")
                arr[t, c] = 1
        return cls(arr, vocab_size)

    def codes(self) -> list[list[int]]:
        return [np.flatnonzero(row).tolist() for row in self.visits]

    def __len__(self) -> int:
        return self.visits.shape[0]

    def __array__(self, dtype=None, copy=None):
        return self.visits if dtype is None else self.visits.astype(dtype)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Record):
            return NotImplemented
        return self.vocab_size == other.vocab_size and np.array_equal(self.visits, other.visits)

    def __hash__(self) -> int:
        return hash((self.vocab_size, self.visits.tobytes()))

    def __repr__(self) -> str:
        return f"Record(T={len(self)}, vocab_size={self.vocab_size}, codes={self.codes()})"


@dataclass(frozen=True)
class TemporalComponent:
    """Past-visit selector of a rule.

    Positive indices are absolute 1-based visits, negative ones are offsets from
    the current step (-1 is the previous visit).  ``all_past`` selects every
    earlier visit.  An empty component marks a static rule.
    """

    indices: frozenset[int] = frozenset()
    all_past: bool = False

    def __post_init__(self) -> None:
        idx = frozenset(int(i) for i in self.indices)
        if 0 in idx:
            raise ValueError("0 is not a valid temporal index")
        object.__setattr__(self, "indices", idx)

    @classmethod
    def of(cls, *items: int | str) -> "TemporalComponent":
        """Build from integers and/or ``"*"`` (all past visits)."""
        ints = [i for i in items if i != "*"]
        return cls(frozenset(ints), all_past="*" in items)

    @property
    def is_static(self) -> bool:
        return not self.indices and not self.all_past

    def sort_key(self) -> tuple:
        return (not self.all_past, sorted(self.indices))

    def tokens(self) -> list[str]:
        toks = ["*"] if self.all_past else []
        toks += [str(i) for i in sorted(self.indices)]
        return toks

    def __or__(self, other: "TemporalComponent") -> "TemporalComponent":
        return TemporalComponent(self.indices | other.indices, self.all_past or other.all_past)

    def __str__(self) -> str:
        return "{" + ",".join(self.tokens()) + "}"


STATIC = TemporalComponent()
ALL_PAST = TemporalComponent(all_past=True)


@dataclass(frozen=True)
class Literal:
    scope: Scope
    code: int
    negated: bool = False

    @classmethod
    def cur(cls, code: int, negated: bool = False) -> "Literal":
        return cls(Scope.CURRENT, code, negated)

    @classmethod
    def past(cls, code: int, negated: bool = False) -> "Literal":
        return cls(Scope.HISTORY, code, negated)

    def __invert__(self) -> "Literal":
        return Literal(self.scope, self.code, not self.negated)

    def __str__(self) -> str:
        return f"{'NOT ' if self.negated else ''}{self.scope.value}[{self.code}]"


@dataclass(frozen=True)
class Rule:
    """``antecedent => visit[output_code] = alpha`` evaluated at every step.

    History literals read the OR of the visits selected by ``temporal``.
    ``alpha`` in {0, 1} makes a hard constraint; anything in between is soft.
    """

    id: str
    output_code: int
    alpha: float = 1.0
    antecedent: tuple[Literal, ...] = ()
    temporal: TemporalComponent = STATIC

    def __post_init__(self) -> None:
        object.__setattr__(self, "antecedent", tuple(self.antecedent))
        object.__setattr__(self, "alpha", float(self.alpha))

    @property
    def is_temporal(self) -> bool:
        return not self.temporal.is_static

    @property
    def is_hard(self) -> bool:
        return self.alpha in (0.0, 1.0)

    def current_codes(self) -> set[int]:
        return {lit.code for lit in self.antecedent if lit.scope is Scope.CURRENT}

    def history_codes(self) -> set[int]:
        return {lit.code for lit in self.antecedent if lit.scope is Scope.HISTORY}


@dataclass(frozen=True)
class RuleSet:
    rules: tuple[Rule, ...]
    vocab_size: int

    def __post_init__(self) -> None:
        object.__setattr__(self, "rules", tuple(self.rules))

    def __iter__(self) -> Iterator[Rule]:
        return iter(self.rules)

    def __len__(self) -> int:
        return len(self.rules)

    def __getitem__(self, i: int) -> Rule:
        return self.rules[i]

    @property
    def has_soft(self) -> bool:
        return any(not r.is_hard for r in self.rules)


@dataclass(frozen=True)
class Issue:
    rule_ids: tuple[str, ...]
    reason: str

    def __str__(self) -> str:
        return f"[{', '.join(self.rule_ids)}] {self.reason}"


@dataclass
class ValidationReport:
    issues: list[Issue] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.issues

    def __iter__(self) -> Iterator[Issue]:
        return iter(self.issues)

    def __len__(self) -> int:
        return len(self.issues)

    def __str__(self) -> str:
        if self.ok:
            return "OK"
        return "\n".join(str(i) for i in self.issues)


class InvalidRuleSet(ValueError):
    def __init__(self, report: ValidationReport):
        super().__init__(f"invalid rule set:\n{report}")
        self.report = report


def dependency_graph(rules: Sequence[Rule]) -> nx.DiGraph:
    """Same-step evaluation constraints between rules (nodes are positions).

    ``a -> b`` when rule ``a`` writes a code that rule ``b`` reads in the current
    visit, or when both write the same code and ``a`` comes first in the file
    (so the later rule's value wins).
    """
    g = nx.DiGraph()
    g.add_nodes_from(range(len(rules)))
    readers: dict[int, list[int]] = {}
    for j, r in enumerate(rules):
        for c in r.current_codes():
            readers.setdefault(c, []).append(j)
    last_writer: dict[int, int] = {}
    for i, r in enumerate(rules):
        for j in readers.get(r.output_code, ()):
            g.add_edge(i, j, kind="reads")
        prev = last_writer.get(r.output_code)
        if prev is not None:
            g.add_edge(prev, i, kind="same-output")
        last_writer[r.output_code] = i
    return g


def topological_order(rules: Sequence[Rule]) -> list[int]:
    """Positions of ``rules`` in evaluation order; ties keep file order."""
    g = dependency_graph(rules)
    try:
        return list(nx.lexicographical_topological_sort(g))
    except nx.NetworkXUnfeasible:
        raise InvalidRuleSet(validate_ruleset(RuleSet(rules, _vocab_hint(rules)))) from None


def _vocab_hint(rules: Sequence[Rule]) -> int:
    codes = [r.output_code for r in rules] + [l.code for r in rules for l in r.antecedent]
    return max(codes, default=0) + 1


def validate_ruleset(rules: RuleSet) -> ValidationReport:
    report = ValidationReport()
    add = report.issues.append
    n = rules.vocab_size
    if n < 1:
        add(Issue((), f"vocab_size must be positive, got {n}"))

    seen_ids: dict[str, int] = {}
    for r in rules:
        if r.id in seen_ids:
            add(Issue((r.id,), "duplicate rule id"))
        seen_ids.setdefault(r.id, 0)
        if not 0 <= r.output_code < n:
            add(Issue((r.id,), f"output code {r.output_code} outside [0, {n})"))
        if not 0.0 <= r.alpha <= 1.0:
            add(Issue((r.id,), f"alpha {r.alpha} outside [0, 1]"))
        for lit in r.antecedent:
            if not 0 <= lit.code < n:
                add(Issue((r.id,), f"literal {lit} code outside [0, {n})"))
        hist = [lit for lit in r.antecedent if lit.scope is Scope.HISTORY]
        if hist and r.temporal.is_static:
            add(Issue((r.id,), "history literal in a rule with an empty temporal component"))
        if not hist and not r.temporal.is_static:
            add(Issue((r.id,), "temporal component is not read by any history literal"))
        polarity: dict[tuple[Scope, int], bool] = {}
        for lit in r.antecedent:
            key = (lit.scope, lit.code)
            if key in polarity and polarity[key] != lit.negated:
                add(Issue((r.id,), f"contradictory antecedent on {lit.scope.value}[{lit.code}]"))
                break
            polarity[key] = lit.negated

    signatures: dict[tuple, str] = {}
    for r in rules:
        sig = (r.output_code, r.temporal, frozenset(r.antecedent))
        if sig in signatures:
            add(Issue((signatures[sig], r.id), "duplicate output/temporal component with identical antecedent"))
        else:
            signatures[sig] = r.id

    g = dependency_graph(rules.rules)
    for comp in nx.strongly_connected_components(g):
        members = sorted(comp)
        if len(members) > 1:
            add(Issue(tuple(rules[i].id for i in members), "cyclic current-visit dependency"))
        elif g.has_edge(members[0], members[0]):
            add(Issue((rules[members[0]].id,), "rule reads its own output in the current visit"))
    return report


def require_valid(rules: RuleSet) -> None:
    report = validate_ruleset(rules)
    if not report.ok:
        raise InvalidRuleSet(report)
