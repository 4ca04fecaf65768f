"""Data-driven rule discovery.

Five procedures, all over a list of ``T x C`` binary records whose first visit
is the demographic label visit:

* demographic exclusivity (static): at most one code per demographic group;
* exclusive co-occurrence (static): ``b`` only ever appears alongside ``a``;
* demographic-forbidden codes (temporal, first visit): a prevalent code never
  seen in records carrying a given demographic code;
* precedence (temporal, all past): ``b`` only ever appears after ``a``;
* persistence (temporal, previous visit): once ``a`` appears it stays.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
import scipy.sparse as sp

from .rules import ALL_PAST, Literal, Rule, RuleSet, TemporalComponent

FIRST_VISIT = TemporalComponent.of(1)
PREVIOUS_VISIT = TemporalComponent.of(-1)


@dataclass(frozen=True)
class Thresholds:
    min_exclusive: int = 10
    min_demo: int = 500
    min_precedence: int = 10
    min_persist: int = 10
    min_persist_repeat: int = 5


def _as_arrays(dataset: Iterable) -> list[np.ndarray]:
    return [np.asarray(r, dtype=np.uint8) for r in dataset]


def _vocab(records: Sequence[np.ndarray], vocab_size: int | None) -> int:
    if vocab_size is not None:
        return vocab_size
    if not records:
        raise ValueError("vocab_size is required for an empty dataset")
    return records[0].shape[1]


def _stacked(records: Sequence[np.ndarray], C: int) -> sp.csr_matrix:
    if not records:
        return sp.csr_matrix((0, C), dtype=np.int64)
    return sp.csr_matrix(np.concatenate(records, axis=0).astype(np.int64))


def mine_demographic_exclusive(dataset, demographic_groups: Sequence[Sequence[int]], vocab_size: int | None = None) -> list[Rule]:
    """Pairwise ordered exclusions: for ``i < j`` in a group, ``cur[g_i] => g_j = 0``.

    Earlier codes win, so a later code is cleared whenever an earlier one is set.
    """
    seen: set[int] = set()
    for grp in demographic_groups:
        overlap = seen.intersection(grp)
        if overlap or len(set(grp)) != len(grp):
            raise ValueError(f"demographic groups overlap on codes {sorted(overlap) or list(grp)}")
        seen.update(grp)
    if vocab_size is not None and any(not 0 <= c < vocab_size for c in seen):
        raise ValueError("demographic code outside the vocabulary")
    rules = []
    for grp in demographic_groups:
        for i, a in enumerate(grp):
            for b in grp[i + 1:]:
                rules.append(Rule(id=f"excl_{a}_{b}", output_code=b, alpha=0.0, antecedent=(Literal.cur(a),)))
    return rules


def mine_exclusive_cooccurrence(dataset, min_count: int = 10, exclude: Iterable[int] = (), vocab_size: int | None = None) -> list[Rule]:
    """``cur[b] => a = 1`` for every ``b`` seen ``>= min_count`` times and always with ``a``.

    When ``a`` and ``b`` always appear together only the higher index implies
    the lower one, which keeps the rule set acyclic.
    """
    records = _as_arrays(dataset)
    C = _vocab(records, vocab_size)
    V = _stacked(records, C)
    count = np.asarray(V.sum(axis=0)).ravel()
    co = (V.T @ V).tocsr()
    skip = set(exclude)
    rules = []
    for b in np.flatnonzero(count >= max(min_count, 1)):
        b = int(b)
        if b in skip:
            continue
        row = co.getrow(b)
        for a, n_ab in zip(row.indices.tolist(), row.data.tolist()):
            if a == b or a in skip or n_ab != count[b]:
                continue
            if count[a] == count[b] and a > b:
                continue
            rules.append(Rule(id=f"cooc_{b}_{a}", output_code=a, alpha=1.0, antecedent=(Literal.cur(b),)))
    rules.sort(key=lambda r: (r.antecedent[0].code, r.output_code))
    return rules


def mine_demographic_forbidden(
    dataset,
    demographic_codes: Iterable[int],
    min_count: int = 500,
    cooccurrence_rules: Sequence[Rule] = (),
    vocab_size: int | None = None,
) -> list[Rule]:
    """``past[1][d] => c = 0`` for prevalent codes ``c`` never seen after a label visit with ``d``.

    Counts use visits 2 and later.  One closure pass then forbids any code that
    would force an already-forbidden code through a co-occurrence rule.
    """
    records = _as_arrays(dataset)
    C = _vocab(records, vocab_size)
    demos = sorted(set(demographic_codes))
    later = [r[1:] for r in records if r.shape[0] > 1]
    label = np.array([r[0] for r in records if r.shape[0] > 1], dtype=np.int64).reshape(-1, C)
    lengths = np.array([r.shape[0] for r in later], dtype=np.int64)
    per_record = np.zeros((len(later), C), dtype=np.int64)
    for k, r in enumerate(later):
        per_record[k] = r.sum(axis=0)
    total = per_record.sum(axis=0)
    demo_set = set(demos)
    forbidden: list[tuple[int, int]] = []
    for d in demos:
        with_d = label[:, d] == 1 if label.size else np.zeros(0, dtype=bool)
        if not with_d.any() or lengths[with_d].sum() == 0:
            continue
        co_d = per_record[with_d].sum(axis=0)
        for c in np.flatnonzero((total >= max(min_count, 1)) & (co_d == 0)):
            if int(c) not in demo_set:
                forbidden.append((d, int(c)))
    have = set(forbidden)
    for d, a in list(forbidden):
        for r in cooccurrence_rules:
            if r.output_code == a and r.alpha == 1.0:
                b = r.antecedent[0].code
                if (d, b) not in have and b not in demo_set:
                    have.add((d, b))
                    forbidden.append((d, b))
    forbidden.sort()
    return [
        Rule(id=f"forbid_{d}_{c}", output_code=c, alpha=0.0, antecedent=(Literal.past(d),), temporal=FIRST_VISIT)
        for d, c in forbidden
    ]


def _first_occurrence(records: Sequence[np.ndarray], C: int) -> np.ndarray:
    big = np.iinfo(np.int64).max
    F = np.full((len(records), C), big, dtype=np.int64)
    for k, r in enumerate(records):
        if r.shape[0]:
            present = r.any(axis=0)
            F[k, present] = r.argmax(axis=0)[present]
    return F


def mine_precedence(
    dataset,
    min_count: int = 10,
    exclude: Iterable[int] = (),
    cooccurrence_rules: Sequence[Rule] = (),
    vocab_size: int | None = None,
) -> list[Rule]:
    """``NOT past[*][a] => b = 0`` when every record containing ``b`` has ``a`` strictly earlier.

    A closure pass adds ``(a, x)`` for every co-occurrence rule ``x => b``.
    """
    records = _as_arrays(dataset)
    C = _vocab(records, vocab_size)
    skip = set(exclude)
    count = np.zeros(C, dtype=np.int64)
    for r in records:
        count += r.sum(axis=0, dtype=np.int64)
    F = _first_occurrence(records, C)
    keep = np.array([c not in skip for c in range(C)])
    pairs: list[tuple[int, int]] = []
    for b in np.flatnonzero((count >= max(min_count, 1)) & keep):
        rows = F[:, b] < np.iinfo(np.int64).max
        before = (F[rows] < F[rows, b][:, None]).all(axis=0) & keep
        before[b] = False
        pairs.extend((int(a), int(b)) for a in np.flatnonzero(before))
    have = set(pairs)
    for a, b in list(pairs):
        for r in cooccurrence_rules:
            if r.output_code == b and r.alpha == 1.0:
                x = r.antecedent[0].code
                if x != a and (a, x) not in have and x not in skip:
                    have.add((a, x))
                    pairs.append((a, x))
    pairs.sort(key=lambda p: (p[1], p[0]))
    return [
        Rule(id=f"prec_{a}_{b}", output_code=b, alpha=0.0, antecedent=(Literal.past(a, negated=True),), temporal=ALL_PAST)
        for a, b in pairs
    ]


def mine_persistence(
    dataset,
    min_total: int = 10,
    min_repeat: int = 5,
    exclude: Iterable[int] = (),
    vocab_size: int | None = None,
) -> list[Rule]:
    """``past[-1][a] => a = 1`` for codes that, once present, appear in every later visit."""
    records = _as_arrays(dataset)
    if not records:
        return []
    C = _vocab(records, vocab_size)
    total = np.zeros(C, dtype=np.int64)
    repeat = np.zeros(C, dtype=np.int64)
    broken = np.zeros(C, dtype=np.int64)
    for r in records:
        total += r.sum(axis=0, dtype=np.int64)
        if r.shape[0] > 1:
            prev, nxt = r[:-1].astype(bool), r[1:].astype(bool)
            repeat += (prev & nxt).sum(axis=0)
            broken += (prev & ~nxt).sum(axis=0)
    skip = set(exclude)
    ok = (total >= min_total) & (repeat >= max(min_repeat, 1)) & (broken == 0)
    return [
        Rule(id=f"persist_{a}", output_code=int(a), alpha=1.0, antecedent=(Literal.past(int(a)),), temporal=PREVIOUS_VISIT)
        for a in np.flatnonzero(ok)
        if int(a) not in skip
    ]


def mine_all(
    dataset,
    demographic_groups: Sequence[Sequence[int]],
    thresholds: Thresholds = Thresholds(),
    vocab_size: int | None = None,
) -> RuleSet:
    records = _as_arrays(dataset)
    C = _vocab(records, vocab_size)
    demos = sorted({c for g in demographic_groups for c in g})
    exclusive = mine_demographic_exclusive(records, demographic_groups, C)
    cooc = mine_exclusive_cooccurrence(records, thresholds.min_exclusive, exclude=demos, vocab_size=C)
    forbidden = mine_demographic_forbidden(records, demos, thresholds.min_demo, cooc, vocab_size=C)
    precedence = mine_precedence(records, thresholds.min_precedence, exclude=demos, cooccurrence_rules=cooc, vocab_size=C)
    persistence = mine_persistence(records, thresholds.min_persist, thresholds.min_persist_repeat, exclude=demos, vocab_size=C)
    return RuleSet(tuple(exclusive + cooc + forbidden + precedence + persistence), C)
