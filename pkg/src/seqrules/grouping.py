"""Rule grouping and matrix-form rule application.

Rules sharing a temporal component are packed into groups whose members write
distinct codes and never read a code written earlier in the same group.  Each
group becomes a sparse weight matrix ``W`` (``2C x C``, column ``j`` holds the
neuron of the rule writing code ``j``), a threshold vector and an alpha vector,
so one pass ``S = [H, P] W`` evaluates the whole group on every step at once.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Sequence

import numba
import numpy as np
import scipy.sparse as sp

from .neuron import Mode, RuleNeuron, compile_neuron
from .rules import Rule, RuleSet, Scope, TemporalComponent, dependency_graph, require_valid, topological_order
from .temporal import aggregate_history_batch, build_mask_matrix

NO_RULE = -1


@dataclass(frozen=True, eq=False)
class RuleGroup:
    temporal: TemporalComponent
    members: tuple[RuleNeuron, ...]
    W: sp.csc_matrix
    theta_vec: np.ndarray
    alpha_vec: np.ndarray
    has_rule: np.ndarray

    @property
    def outputs(self) -> list[int]:
        return [m.output_code for m in self.members]

    @property
    def rule_ids(self) -> list[str]:
        return [m.rule_id for m in self.members]

    @cached_property
    def active(self) -> tuple[np.ndarray, np.ndarray, np.ndarray, sp.csr_matrix, sp.csr_matrix]:
        """``(cols, hist, cur, Wh, Wc)``: ``W`` restricted to written columns and
        to the history and current rows that carry a nonzero weight."""
        C = self.theta_vec.shape[0]
        cols = np.flatnonzero(self.has_rule)
        Wa = self.W.tocsr()[:, cols]
        Wh, Wc = Wa[:C], Wa[C:]
        hist = np.flatnonzero(np.diff(Wh.indptr))
        cur = np.flatnonzero(np.diff(Wc.indptr))
        return cols, hist, cur, Wh[hist], Wc[cur]

    @cached_property
    def plan(self) -> "_GroupPlan":
        C = self.theta_vec.shape[0]
        cols, hist, _, _, _ = self.active
        Wa = self.W[:, cols].tocsc()
        Wa.sort_indices()
        rows = Wa.indices.astype(np.int64)
        pos = np.full(C, -1, dtype=np.int64)
        pos[hist] = np.arange(hist.size)
        is_hist = rows < C
        idx = np.where(is_hist, pos[np.minimum(rows, C - 1)], rows - C)
        return _GroupPlan(
            cols=cols.astype(np.int64),
            hist=hist.astype(np.int64),
            ptr=Wa.indptr.astype(np.int64),
            is_hist=is_hist,
            idx=idx.astype(np.int64),
            w=Wa.data.astype(np.int64),
            theta=self.theta_vec[cols].astype(np.int64),
            alpha=self.alpha_vec[cols].astype(np.float64),
        )

    @property
    def reads_history(self) -> bool:
        return self.active[1].size > 0

    @cached_property
    def has_soft(self) -> bool:
        return any(m.alpha not in (0.0, 1.0) for m in self.members)


def build_group(temporal: TemporalComponent, rules: Sequence[Rule], vocab_size: int) -> RuleGroup:
    C = vocab_size
    members = tuple(compile_neuron(r, C) for r in rules)
    theta = np.full(C, NO_RULE, dtype=np.int64)
    alpha = np.zeros(C, dtype=np.float64)
    has_rule = np.zeros(C, dtype=bool)
    rows, cols, vals = [], [], []
    for n in members:
        j = n.output_code
        if has_rule[j]:
            raise ValueError(f"two rules in one group write code {j}")
        has_rule[j] = True
        theta[j] = n.threshold
        alpha[j] = n.alpha
        nz = np.flatnonzero(n.weights)
        rows.extend(nz.tolist())
        cols.extend([j] * nz.size)
        vals.extend(n.weights[nz].tolist())
    W = sp.csc_matrix((np.array(vals, dtype=np.int32), (rows, cols)), shape=(2 * C, C))
    for arr in (theta, alpha, has_rule):
        arr.flags.writeable = False
    return RuleGroup(temporal, members, W, theta, alpha, has_rule)


@dataclass(frozen=True)
class _GroupPlan:
    """Flat per-rule literal lists for the compiled group kernels.

    Literal ``l`` of rule ``r`` (``ptr[r] <= l < ptr[r + 1]``) reads
    ``h[idx[l]]`` when ``is_hist[l]`` (``h`` is the history over the codes
    ``hist``) and the current visit's code ``idx[l]`` otherwise.
    """

    cols: np.ndarray
    hist: np.ndarray
    ptr: np.ndarray
    is_hist: np.ndarray
    idx: np.ndarray
    w: np.ndarray
    theta: np.ndarray
    alpha: np.ndarray


@dataclass(frozen=True)
class Block:
    """Gather-form evaluation unit for single-step application.

    ``src`` indexes the per-step buffer ``[H_0, ..., H_{k-1}, v]`` where ``H_c``
    is the history vector of the ``c``-th distinct temporal component.
    """

    src: np.ndarray
    weight: np.ndarray
    owner: np.ndarray
    threshold: np.ndarray
    outputs: np.ndarray
    alpha: np.ndarray
    soft: np.ndarray
    single: bool = False  # every rule has exactly one literal, in order


@dataclass(frozen=True)
class StepPlan:
    """Per-step program in flat form.

    Category ``k`` covers ``cat_idx[cat_ptr[k]:cat_ptr[k + 1]]`` (raw signed
    indices) unless ``cat_all_past[k]``.  Literal ``l`` reads history category
    ``lit_cat[l]`` or, when that is ``-1``, the current visit.
    """

    cat_all_past: np.ndarray
    cat_ptr: np.ndarray
    cat_idx: np.ndarray
    rule_ptr: np.ndarray
    lit_cat: np.ndarray
    lit_code: np.ndarray
    lit_w: np.ndarray
    theta: np.ndarray
    outputs: np.ndarray
    alpha: np.ndarray


@dataclass(frozen=True, eq=False)
class CompiledRuleProgram:
    groups: tuple[RuleGroup, ...]
    vocab_size: int
    rules: RuleSet
    order: tuple[int, ...] = field(default=())

    @cached_property
    def has_soft(self) -> bool:
        return self.rules.has_soft

    def __len__(self) -> int:
        return len(self.groups)

    @cached_property
    def categories(self) -> tuple[TemporalComponent, ...]:
        seen: dict[TemporalComponent, None] = {}
        for g in self.groups:
            if not g.temporal.is_static:
                seen.setdefault(g.temporal, None)
        return tuple(seen)

    @cached_property
    def group_blocks(self) -> tuple[Block, ...]:
        by_id = {r.id: r for r in self.rules}
        return tuple(self._block([by_id[rid] for rid in grp.rule_ids]) for grp in self.groups)

    @cached_property
    def step_plan(self) -> "StepPlan":
        """Flat arrays for the compiled per-step kernel: rules in evaluation order."""
        cats = self.categories
        cat_index = {tc: k for k, tc in enumerate(cats)}
        cat_ptr = np.zeros(len(cats) + 1, dtype=np.int64)
        cat_idx = []
        for k, tc in enumerate(cats):
            cat_idx.extend(tc.indices)
            cat_ptr[k + 1] = len(cat_idx)
        rules = [self.rules[i] for i in self.order]
        rule_ptr = np.zeros(len(rules) + 1, dtype=np.int64)
        lit_cat, lit_code, lit_w = [], [], []
        for k, r in enumerate(rules):
            for lit in r.antecedent:
                lit_cat.append(cat_index[r.temporal] if lit.scope is Scope.HISTORY else -1)
                lit_code.append(lit.code)
                lit_w.append(-1 if lit.negated else 1)
            rule_ptr[k + 1] = len(lit_cat)
        return StepPlan(
            cat_all_past=np.array([tc.all_past for tc in cats], dtype=np.bool_),
            cat_ptr=cat_ptr,
            cat_idx=np.array(cat_idx, dtype=np.int64),
            rule_ptr=rule_ptr,
            lit_cat=np.array(lit_cat, dtype=np.int64),
            lit_code=np.array(lit_code, dtype=np.int64),
            lit_w=np.array(lit_w, dtype=np.int64),
            theta=np.array([sum(not l.negated for l in r.antecedent) for r in rules], dtype=np.int64),
            outputs=np.array([r.output_code for r in rules], dtype=np.int64),
            alpha=np.array([r.alpha for r in rules], dtype=np.float64),
        )

    def _block(self, rules: Sequence[Rule]) -> Block:
        C = self.vocab_size
        cat_index = {tc: k for k, tc in enumerate(self.categories)}
        cur_base = len(self.categories) * C
        src, weight, owner = [], [], []
        for k, r in enumerate(rules):
            for lit in r.antecedent:
                if lit.scope is Scope.HISTORY:
                    src.append(cat_index[r.temporal] * C + lit.code)
                else:
                    src.append(cur_base + lit.code)
                weight.append(-1 if lit.negated else 1)
                owner.append(k)
        threshold = np.array([sum(not l.negated for l in r.antecedent) for r in rules], dtype=np.int64)
        alpha = np.array([r.alpha for r in rules], dtype=np.float64)
        return Block(
            src=np.array(src, dtype=np.intp),
            weight=np.array(weight, dtype=np.int64),
            owner=np.array(owner, dtype=np.intp),
            threshold=threshold,
            outputs=np.array([r.output_code for r in rules], dtype=np.intp),
            alpha=alpha,
            soft=(alpha > 0.0) & (alpha < 1.0),
            single=all(len(r.antecedent) == 1 for r in rules),
        )

    def describe(self) -> str:
        """Plain-text dump of each group's nonzero weights plus per-code thresholds and alphas."""
        C = self.vocab_size
        lines = [f"# program: {len(self.rules)} rules, {len(self.groups)} groups, vocab {C}"]
        for k, grp in enumerate(self.groups):
            lines.append(f"GROUP {k} temporal={grp.temporal} rules={','.join(grp.rule_ids)}")
            W = grp.W.tocoo()
            for r, c, v in sorted(zip(W.row.tolist(), W.col.tolist(), W.data.tolist())):
                scope, code = ("past", r) if r < C else ("cur", r - C)
                lines.append(f"  W {scope}[{code}] -> {c} : {v:+d}")
            for j in np.flatnonzero(grp.has_rule):
                lines.append(f"  code {j}: theta={grp.theta_vec[j]} alpha={float(grp.alpha_vec[j])!r}")
        return "\n".join(lines) + "\n"


def _group_rules(rules: Sequence[Rule], order: Sequence[int]) -> list[tuple[TemporalComponent, list[int]]]:
    """Greedy grouping in evaluation order.

    A rule joins the open group of its temporal component unless it reads or
    writes a code already written by that group, or unless a rule it depends on
    was placed in a group emitted after the open one.
    """
    g = dependency_graph(rules)
    groups: list[tuple[TemporalComponent, list[int], set[int]]] = []
    open_group: dict[TemporalComponent, int] = {}
    placed: dict[int, int] = {}
    for i in order:
        r = rules[i]
        k = open_group.get(r.temporal)
        ok = k is not None
        if ok:
            written = groups[k][2]
            if r.output_code in written or r.current_codes() & written:
                ok = False
            elif any(placed[p] > k for p in g.predecessors(i)):
                ok = False
        if not ok:
            groups.append((r.temporal, [], set()))
            k = len(groups) - 1
            open_group[r.temporal] = k
        groups[k][1].append(i)
        groups[k][2].add(r.output_code)
        placed[i] = k
    return [(tc, members) for tc, members, _ in groups]


def compile_program(rules: RuleSet) -> CompiledRuleProgram:
    require_valid(rules)
    order = topological_order(rules.rules)
    groups = tuple(
        build_group(tc, [rules[i] for i in members], rules.vocab_size)
        for tc, members in _group_rules(rules.rules, order)
    )
    return CompiledRuleProgram(groups, rules.vocab_size, rules, tuple(order))


@numba.njit(cache=True, nogil=True)
def _history_row(mask, X, b, t, hist, h):
    h[:] = 0
    for s in range(t):
        if mask[t, s]:
            for j in range(hist.size):
                h[j] |= X[b, s, hist[j]]


@numba.njit(cache=True, nogil=True)
def _fire_row(X, b, t, h, ptr, is_hist, idx, w, theta, fired):
    for r in range(theta.size):
        s = 0
        for l in range(ptr[r], ptr[r + 1]):
            if is_hist[l]:
                s += w[l] * h[idx[l]]
            else:
                s += w[l] * X[b, t, idx[l]]
        fired[r] = s == theta[r]


@numba.njit(cache=True, nogil=True)
def _fired_kernel(mask, X, hist, ptr, is_hist, idx, w, theta):
    B, T, _ = X.shape
    fired = np.zeros((B, T, theta.size), dtype=np.bool_)
    h = np.zeros(hist.size, dtype=np.uint8)
    for b in range(B):
        for t in range(T):
            if hist.size:
                _history_row(mask, X, b, t, hist, h)
            _fire_row(X, b, t, h, ptr, is_hist, idx, w, theta, fired[b, t])
    return fired


@numba.njit(cache=True, nogil=True)
def _apply_kernel(mask, X, out, hist, ptr, is_hist, idx, w, theta, cols, values, u):
    B, T, _ = X.shape
    n = theta.size
    soft = u.shape[0] > 0
    fired = np.zeros(n, dtype=np.bool_)
    h = np.zeros(hist.size, dtype=np.uint8)
    for b in range(B):
        for t in range(T):
            if hist.size:
                _history_row(mask, X, b, t, hist, h)
            _fire_row(X, b, t, h, ptr, is_hist, idx, w, theta, fired)
            for r in range(n):
                if fired[r]:
                    if soft:
                        out[b, t, cols[r]] = 1 if u[b, t, r] < values[r] else 0
                    else:
                        out[b, t, cols[r]] = values[r]


_EMPTY_MASK = np.zeros((0, 0), dtype=np.uint8)


def _kernel_mask(group: RuleGroup, T: int) -> np.ndarray:
    """The kernels read the mask only when the group reads history."""
    return build_mask_matrix(group.temporal, T) if group.reads_history else _EMPTY_MASK


def _as_batch(a: np.ndarray, dtype) -> np.ndarray:
    a = np.asarray(a)
    return np.ascontiguousarray(a.reshape((-1,) + a.shape[-2:]), dtype=dtype)


def _antecedent_sums(inputs: np.ndarray, group: RuleGroup) -> np.ndarray:
    """``S = [H, P] W`` through the sparse matrices, written columns only.

    This is the plain matrix formulation, kept as an independent route to
    the fused kernels.  History is aggregated only for codes a rule reads.
    """
    cols, hist, cur, Wh, Wc = group.active
    L = np.asarray(inputs, dtype=np.uint8)
    lead = L.shape[:-1]
    S = np.zeros((int(np.prod(lead)), cols.size), dtype=np.int64)
    if hist.size:
        M = build_mask_matrix(group.temporal, L.shape[-2])
        H = aggregate_history_batch(L[..., hist], M, method="matmul")
        S += np.asarray(H.reshape(-1, hist.size) @ Wh)
    if cur.size:
        S += np.asarray(L[..., cur].reshape(-1, cur.size) @ Wc)
    return S.reshape(lead + (cols.size,))


def fired_cells(inputs: np.ndarray, group: RuleGroup, method: str = "kernel") -> np.ndarray:
    """Boolean ``(..., T, C)`` map of cells whose rule fires on ``inputs``.

    ``method="sparse"`` evaluates ``S = [H, P] W`` with scipy instead of the
    compiled kernel.
    """
    inputs = np.asarray(inputs)
    cols = group.active[0]
    out = np.zeros(inputs.shape, dtype=bool)
    if method == "sparse":
        out[..., cols] = _antecedent_sums(inputs, group) == group.theta_vec[cols]
        return out
    if method != "kernel":
        raise ValueError(f"unknown method {method!r}")
    pl = group.plan
    X = _as_batch(inputs, np.uint8)
    mask = _kernel_mask(group, X.shape[1])
    f = _fired_kernel(mask, X, pl.hist, pl.ptr, pl.is_hist, pl.idx, pl.w, pl.theta)
    out[..., cols] = f.reshape(inputs.shape[:-1] + (cols.size,))
    return out


def _check_batch_args(matrix, C, mode, labels):
    matrix = np.asarray(matrix)
    if matrix.ndim not in (2, 3) or matrix.shape[-1] != C:
        raise ValueError(f"expected (..., T, {C}) matrix, got {matrix.shape}")
    if mode is Mode.TRAIN_PROB:
        if labels is None:
            raise ValueError("TRAIN_PROB mode needs ground-truth labels")
        labels = np.asarray(labels)
        if labels.shape != matrix.shape:
            raise ValueError(f"labels shape {labels.shape} != matrix shape {matrix.shape}")
    return matrix, labels


def _run_group(X: np.ndarray, out: np.ndarray, group: RuleGroup, mode: Mode, rng) -> None:
    """Evaluate ``group`` on inputs ``X`` and write overrides into ``out`` (both ``B x T x C``)."""
    pl = group.plan
    if not pl.cols.size:
        return
    B, T = X.shape[:2]
    u = _NO_DRAWS
    if mode is Mode.TRAIN_PROB:
        values = pl.alpha
    elif group.has_soft:
        if rng is None:
            raise ValueError("soft rules need an RNG in GENERATE mode")
        values = pl.alpha
        u = rng.random((B, T, pl.cols.size))
    else:
        values = (pl.alpha >= 1.0).astype(np.uint8)
    mask = _kernel_mask(group, T)
    _apply_kernel(mask, X, out, pl.hist, pl.ptr, pl.is_hist, pl.idx, pl.w, pl.theta, pl.cols, values, u)


_NO_DRAWS = np.zeros((0, 0, 0))


def apply_group_batch(
    matrix: np.ndarray,
    group: RuleGroup,
    mode: Mode = Mode.GENERATE,
    rng: np.random.Generator | None = None,
    labels: np.ndarray | None = None,
) -> np.ndarray:
    """Apply one group to every step (and every record of a batch) at once.

    GENERATE: ``matrix`` is binary and also supplies the rule inputs.  Soft
    rules draw one uniform per (record, step, rule) cell of the group.
    TRAIN_PROB: ``matrix`` holds probabilities, inputs come from ``labels``.
    """
    return apply_program_batch(matrix, (group,), mode, rng, labels, vocab_size=group.theta_vec.shape[0])


def apply_program_batch(
    matrix: np.ndarray,
    program: CompiledRuleProgram | Sequence[RuleGroup],
    mode: Mode = Mode.GENERATE,
    rng: np.random.Generator | None = None,
    labels: np.ndarray | None = None,
    vocab_size: int | None = None,
) -> np.ndarray:
    """Apply every group in order.

    In TRAIN_PROB mode the inputs never change, so all groups write into one
    output buffer; in GENERATE mode each group reads the previous group's result.
    """
    if isinstance(program, CompiledRuleProgram):
        groups, C = program.groups, program.vocab_size
    else:
        groups, C = tuple(program), vocab_size
    matrix, labels = _check_batch_args(matrix, C, mode, labels)
    if mode is Mode.TRAIN_PROB:
        X = _as_batch(labels, np.uint8)
        out = np.array(_as_batch(matrix, np.float64), copy=True)
        for grp in groups:
            _run_group(X, out, grp, mode, rng)
        return out.reshape(matrix.shape)
    cur = np.array(_as_batch(matrix, np.uint8), copy=True)
    for grp in groups:
        nxt = cur.copy()
        _run_group(cur, nxt, grp, mode, rng)
        cur = nxt
    return cur.reshape(matrix.shape)
