"""Runtime entry points: per-step enforcement during generation and
whole-sequence enforcement of model probabilities during training.

RNG discipline.  Every record owns one ``numpy.random.Generator`` derived from
``SeedSequence(seed, spawn_key=(record_index,))``.  Per generated step the
stream is consumed as: optional stop draw, ``C`` uniforms for the visit sample,
then (only when the program has soft rules) ``C`` uniforms ``u`` shared by all
rules at that step: a fired rule writing code ``j`` sets ``u[j] < alpha``.
Hard rules therefore never depend on the RNG.
"""

from __future__ import annotations

import concurrent.futures as cf
from dataclasses import dataclass
from typing import Protocol, Sequence, runtime_checkable

import numba
import numpy as np

from .grouping import Block, CompiledRuleProgram, StepPlan, apply_program_batch
from .neuron import Mode
from .rules import Record, TemporalComponent
from .temporal import resolve_indices


@runtime_checkable
class GeneratorAdapter(Protocol):
    """Anything that maps a record prefix to next-visit code probabilities.

    Optional extras picked up by :func:`generate_constrained`:
    ``label_visit(rng)`` supplies visit 1 directly, and
    ``stop_probability(prefix)`` gives the chance the record ends before the
    next visit.
    """

    vocab_size: int

    def predict(self, prefix: np.ndarray) -> np.ndarray: ...


@dataclass(frozen=True)
class GenerationConfig:
    max_steps: int = 100
    end_code: int | None = None
    fixed_length: int | None = None
    seed: int = 0
    use_label_visit: bool = True

    def __post_init__(self) -> None:
        if self.max_steps < 1:
            raise ValueError("max_steps must be >= 1")
        if self.fixed_length is not None and self.fixed_length < 0:
            raise ValueError("fixed_length must be >= 0")


def record_rng(seed: int, index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(index,)))


class _StepState:
    """Prefix buffer plus the per-step input buffer ``[H_0 .. H_{k-1}, v]``."""

    def __init__(self, categories: Sequence[TemporalComponent], vocab_size: int, capacity: int):
        C = vocab_size
        self.C = C
        self.categories = tuple(categories)
        self.visits = np.zeros((capacity, C), dtype=np.uint8)
        self.t = 1
        self.running = np.zeros(C, dtype=np.uint8)
        k = len(self.categories)
        self.buf = np.zeros((k + 1) * C, dtype=np.uint8)
        self.current = self.buf[k * C:]

    @classmethod
    def from_prefix(cls, prefix: np.ndarray, categories, vocab_size: int) -> "_StepState":
        prefix = np.asarray(prefix, dtype=np.uint8).reshape(-1, vocab_size)
        st = cls(categories, vocab_size, prefix.shape[0] + 1)
        st.visits[: prefix.shape[0]] = prefix
        if prefix.shape[0]:
            np.bitwise_or.reduce(prefix, axis=0, out=st.running)
        st.t = prefix.shape[0] + 1
        return st

    def load_history(self) -> None:
        C, t = self.C, self.t
        for k, tc in enumerate(self.categories):
            seg = self.buf[k * C:(k + 1) * C]
            if tc.all_past:
                seg[:] = self.running
                continue
            idx = sorted(resolve_indices(tc, t))
            if not idx:
                seg[:] = 0
            elif len(idx) == 1:
                seg[:] = self.visits[idx[0] - 1]
            else:
                np.bitwise_or.reduce(self.visits[[i - 1 for i in idx]], axis=0, out=seg)

    def commit(self) -> None:
        self.visits[self.t - 1] = self.current
        self.running |= self.current
        self.t += 1


def _run_blocks(buf: np.ndarray, current: np.ndarray, blocks: Sequence[Block], u: np.ndarray | None) -> None:
    for b in blocks:
        n = b.threshold.shape[0]
        if b.single:
            fired = b.weight * buf[b.src] >= b.threshold
        elif b.src.size:
            s = np.bincount(b.owner, weights=b.weight * buf[b.src], minlength=n)
            fired = s >= b.threshold
        else:
            fired = np.ones(n, dtype=bool)
        if not fired.any():
            continue
        outs = b.outputs[fired]
        if u is None:
            current[outs] = b.alpha[fired] >= 1.0
        else:
            current[outs] = u[outs] < b.alpha[fired]


@numba.njit(cache=True, nogil=True)
def _step_kernel(visits, t, running, current, H, cat_all_past, cat_ptr, cat_idx,
                 rule_ptr, lit_cat, lit_code, lit_w, theta, outputs, alpha, u):
    C = current.size
    for k in range(cat_all_past.size):
        if cat_all_past[k]:
            H[k, :] = running
            continue
        H[k, :] = 0
        for q in range(cat_ptr[k], cat_ptr[k + 1]):
            i = cat_idx[q]
            if i < 0:
                i += t
            if 1 <= i < t:
                for c in range(C):
                    H[k, c] |= visits[i - 1, c]
    soft = u.size > 0
    for r in range(theta.size):
        s = 0
        for l in range(rule_ptr[r], rule_ptr[r + 1]):
            if lit_cat[l] < 0:
                s += lit_w[l] * current[lit_code[l]]
            else:
                s += lit_w[l] * H[lit_cat[l], lit_code[l]]
        if s == theta[r]:
            o = outputs[r]
            if soft:
                current[o] = 1 if u[o] < alpha[r] else 0
            else:
                current[o] = 1 if alpha[r] >= 1.0 else 0


_NO_U = np.zeros(0)


def _run_step(st: "_StepState", plan: StepPlan, H: np.ndarray, u: np.ndarray | None) -> None:
    """Fused history load and rule evaluation for step ``st.t``; rules run in
    evaluation order, each seeing earlier overrides of the current visit."""
    _step_kernel(
        st.visits, st.t, st.running, st.current, H, plan.cat_all_past, plan.cat_ptr,
        plan.cat_idx, plan.rule_ptr, plan.lit_cat, plan.lit_code, plan.lit_w,
        plan.theta, plan.outputs, plan.alpha, _NO_U if u is None else u,
    )


def _enforcer(program: CompiledRuleProgram, by_group: bool):
    """``enforce(state, u)`` for one step: the compiled kernel, or with
    ``by_group`` the group-by-group gather path (kept as a cross-check)."""
    if by_group:
        blocks = program.group_blocks

        def enforce(st: _StepState, u) -> None:
            st.load_history()
            _run_blocks(st.buf, st.current, blocks, u)
    else:
        plan = program.step_plan
        H = np.zeros((len(program.categories), program.vocab_size), dtype=np.uint8)

        def enforce(st: _StepState, u) -> None:
            _run_step(st, plan, H, u)
    return enforce


def constrain_step(
    record_prefix,
    sampled_visit: np.ndarray,
    program: CompiledRuleProgram,
    rng: np.random.Generator | None = None,
    by_group: bool = False,
) -> np.ndarray:
    """Enforce ``program`` on the visit at step ``len(prefix) + 1``.

    The default runs a compiled kernel over the rules in evaluation order;
    ``by_group=True`` evaluates the compiled groups one after another through
    gather blocks.  Both give identical results.
    """
    C = program.vocab_size
    visit = np.asarray(sampled_visit)
    if visit.shape != (C,):
        raise ValueError(f"visit must have length {C}, got {visit.shape}")
    st = _StepState.from_prefix(np.asarray(record_prefix), program.categories, C)
    st.current[:] = visit
    _enforcer(program, by_group)(st, _soft_draws(program, rng))
    return st.current.copy()


def _soft_draws(program: CompiledRuleProgram, rng: np.random.Generator | None) -> np.ndarray | None:
    if not program.has_soft:
        return None
    if rng is None:
        raise ValueError("program has soft rules; an RNG is required")
    return rng.random(program.vocab_size)


def constrain_record(
    record,
    program: CompiledRuleProgram,
    rng: np.random.Generator | None = None,
    by_group: bool = False,
) -> np.ndarray:
    """Step-by-step enforcement over a complete record, as generation would do it."""
    P = np.asarray(record, dtype=np.uint8)
    T, C = P.shape
    st = _StepState(program.categories, C, max(T, 1))
    enforce = _enforcer(program, by_group)
    for t in range(T):
        st.current[:] = P[t]
        enforce(st, _soft_draws(program, rng))
        st.commit()
    return st.visits[:T].copy()


def _check_probs(probs: np.ndarray, C: int) -> np.ndarray:
    probs = np.asarray(probs, dtype=np.float64)
    if probs.shape != (C,):
        raise ValueError(f"adapter returned probabilities of shape {probs.shape}, expected ({C},)")
    lo, hi = probs.min(initial=0.0), probs.max(initial=0.0)
    if not (lo >= 0.0 and hi <= 1.0):
        raise ValueError("adapter probabilities must lie in [0, 1]")
    return probs


def generate_constrained(
    adapter: GeneratorAdapter,
    program: CompiledRuleProgram | None,
    config: GenerationConfig = GenerationConfig(),
    rng: np.random.Generator | None = None,
    by_group: bool = False,
) -> Record:
    """Sample one record visit by visit, enforcing ``program`` after each sample.

    ``program=None`` gives the unconstrained baseline through the same loop.
    """
    C = adapter.vocab_size
    if program is not None and program.vocab_size != C:
        raise ValueError(f"program vocab {program.vocab_size} != adapter vocab {C}")
    if rng is None:
        rng = record_rng(config.seed, 0)
    T_max = config.max_steps
    if config.fixed_length is not None:
        T_max = min(T_max, config.fixed_length)
    categories = program.categories if program is not None else ()
    st = _StepState(categories, C, max(T_max, 1))
    enforce = _enforcer(program, by_group) if program is not None and len(program.rules) else None
    label_visit = getattr(adapter, "label_visit", None) if config.use_label_visit else None
    stop_probability = getattr(adapter, "stop_probability", None)
    if config.fixed_length is not None:
        stop_probability = None
    for t in range(1, T_max + 1):
        prefix = st.visits[: t - 1]
        if t == 1 and label_visit is not None:
            v = np.asarray(label_visit(rng), dtype=np.uint8)
            if v.shape != (C,):
                raise ValueError(f"label visit must have length {C}")
        else:
            if stop_probability is not None and t > 1 and rng.random() < stop_probability(prefix):
                break
            probs = _check_probs(adapter.predict(prefix), C)
            v = rng.random(C) < probs
            if config.end_code is not None and v[config.end_code]:
                break
        st.current[:] = v
        if enforce is not None:
            enforce(st, _soft_draws(program, rng))
        st.commit()
    return Record(st.visits[: st.t - 1], C)


def _generate_chunk(args) -> list[Record]:
    adapter, program, config, indices, by_group = args
    return [
        generate_constrained(adapter, program, config, record_rng(config.seed, i), by_group)
        for i in indices
    ]


def generate_dataset(
    adapter: GeneratorAdapter,
    program: CompiledRuleProgram | None,
    n: int,
    config: GenerationConfig = GenerationConfig(),
    threads: int = 1,
    by_group: bool = False,
) -> list[Record]:
    """Generate ``n`` records; record ``i`` depends only on ``(config.seed, i)``."""
    if threads <= 1 or n < 2:
        return _generate_chunk((adapter, program, config, range(n), by_group))
    chunks = [range(k, n, threads) for k in range(threads)]
    out: list[Record | None] = [None] * n
    with cf.ProcessPoolExecutor(max_workers=threads) as pool:
        for idx, recs in zip(chunks, pool.map(_generate_chunk, [(adapter, program, config, c, by_group) for c in chunks])):
            for i, rec in zip(idx, recs):
                out[i] = rec
    return out  # type: ignore[return-value]


def constrain_training_batch(
    prob_matrix: np.ndarray,
    label_matrix: np.ndarray,
    program: CompiledRuleProgram,
) -> np.ndarray:
    """Teacher-forced enforcement: rule inputs come from the true labels and
    every fired cell's probability is replaced by the rule's alpha."""
    probs = np.asarray(prob_matrix, dtype=np.float64)
    labels = np.asarray(label_matrix)
    if probs.shape != labels.shape:
        raise ValueError(f"probability shape {probs.shape} != label shape {labels.shape}")
    if probs.ndim not in (2, 3) or probs.shape[-1] != program.vocab_size:
        raise ValueError(f"expected (..., T, {program.vocab_size}) matrices, got {probs.shape}")
    return apply_program_batch(probs, program, Mode.TRAIN_PROB, labels=labels)


_CHECK_CELLS = 1 << 22


def check_violations_fast(dataset, program: CompiledRuleProgram):
    """Matrix-path violation count; same report as the oracle checker.

    Records of equal length are stacked and each group is evaluated once per
    stack.  Inputs are the finished records themselves, so this is the batch
    re-check of generated data.
    """
    from .grouping import fired_cells
    from .oracle import RuleTally, ViolationReport

    rules = program.rules
    index = {r.id: k for k, r in enumerate(rules)}
    tallies = [RuleTally(r.id, r.is_temporal, r.alpha) for r in rules]
    records = [np.asarray(r, dtype=np.uint8) for r in dataset]
    by_len: dict[int, list[int]] = {}
    for k, r in enumerate(records):
        by_len.setdefault(r.shape[0], []).append(k)
    clean = np.ones(len(records), dtype=bool)
    chunks = []
    for T, ids in by_len.items():
        if T:
            step = max(1, _CHECK_CELLS // (T * program.vocab_size))
            chunks.extend(ids[i:i + step] for i in range(0, len(ids), step))
    for ids in chunks:
        X = np.stack([records[k] for k in ids])
        for grp in program.groups:
            fired = fired_cells(X, grp)
            for n in grp.members:
                j = n.output_code
                f = fired[..., j]
                bits = X[..., j].astype(bool)
                tally = tallies[index[n.rule_id]]
                tally.fired += int(f.sum())
                tally.fired_ones += int((f & bits).sum())
                if n.alpha == 1.0:
                    bad = f & ~bits
                elif n.alpha == 0.0:
                    bad = f & bits
                else:
                    continue
                per_record = bad.sum(axis=1)
                tally.violations += int(per_record.sum())
                clean[np.asarray(ids)[per_record > 0]] = False
    return ViolationReport(tallies, len(records), int(clean.sum()))
