"""Timing harnesses: generation overhead and batch-pass scaling."""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .engine import GenerationConfig, GeneratorAdapter, generate_constrained, record_rng
from .grouping import CompiledRuleProgram, apply_program_batch, compile_program
from .neuron import Mode
from .rules import ALL_PAST, Literal, Rule, RuleSet


@dataclass
class Estimate:
    mean: float
    half_width: float

    def __str__(self) -> str:
        return f"{self.mean:.6g} +/- {self.half_width:.2g}"


def mean_ci(samples: Sequence[float]) -> Estimate:
    """Mean with a normal-approximation 95% half width."""
    x = np.asarray(samples, dtype=np.float64)
    if x.size < 2:
        return Estimate(float(x.mean()) if x.size else float("nan"), float("nan"))
    return Estimate(float(x.mean()), float(1.96 * x.std(ddof=1) / np.sqrt(x.size)))


@dataclass
class BenchResult:
    unconstrained: Estimate
    constrained: Estimate
    n_records: int
    repeats: int
    n_rules: int

    @property
    def ratio(self) -> float:
        return self.constrained.mean / self.unconstrained.mean

    @property
    def slowdown_pct(self) -> float:
        return 100.0 * (self.ratio - 1.0)

    def to_text(self) -> str:
        return (
            f"records_per_repeat {self.n_records}\n"
            f"repeats {self.repeats}\n"
            f"rules {self.n_rules}\n"
            f"unconstrained_s_per_record {self.unconstrained}\n"
            f"constrained_s_per_record {self.constrained}\n"
            f"ratio {self.ratio:.4f}\n"
            f"slowdown_pct {self.slowdown_pct:.2f}\n"
        )


def _per_record(adapter, program, config, n) -> float:
    start = time.perf_counter()
    for i in range(n):
        generate_constrained(adapter, program, config, record_rng(config.seed, i))
    return (time.perf_counter() - start) / n


def bench_generation(
    adapter: GeneratorAdapter,
    program: CompiledRuleProgram,
    n_records: int = 200,
    repeats: int = 25,
    config: GenerationConfig = GenerationConfig(),
) -> BenchResult:
    """Seconds per generated record with and without ``program``.

    The two variants alternate within each repeat so drift affects both alike.
    """
    _per_record(adapter, program, config, min(n_records, 5))
    un, con = [], []
    for _ in range(repeats):
        un.append(_per_record(adapter, None, config, n_records))
        con.append(_per_record(adapter, program, config, n_records))
    return BenchResult(mean_ci(un), mean_ci(con), n_records, repeats, len(program.rules))


def best_time(fn: Callable[[], object], repeats: int = 5) -> float:
    best = float("inf")
    for _ in range(repeats):
        start = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - start)
    return best


def loglog_slope(x: Sequence[float], y: Sequence[float]) -> float:
    return float(np.polyfit(np.log(x), np.log(y), 1)[0])


def sweep_program(vocab_size: int) -> CompiledRuleProgram:
    """One all-past rule per code, so history is aggregated over every code."""
    C = vocab_size
    rules = tuple(Rule(f"s{c}", c, 1.0, (Literal.past(c),), ALL_PAST) for c in range(C))
    return compile_program(RuleSet(rules, C))


@dataclass
class ScalingResult:
    T_values: list[int]
    T_times: list[float]
    C_values: list[int]
    C_times: list[float]
    fixed_C: int
    fixed_T: int
    batch: int

    @property
    def slope_T(self) -> float:
        return loglog_slope(self.T_values, self.T_times)

    @property
    def slope_C(self) -> float:
        return loglog_slope(self.C_values, self.C_times)

    def to_text(self) -> str:
        lines = [f"batch {self.batch}", f"# T sweep at C={self.fixed_C}"]
        lines += [f"T {t} seconds {s:.6g}" for t, s in zip(self.T_values, self.T_times)]
        lines.append(f"# C sweep at T={self.fixed_T}")
        lines += [f"C {c} seconds {s:.6g}" for c, s in zip(self.C_values, self.C_times)]
        lines.append(f"slope_T {self.slope_T:.3f}")
        lines.append(f"slope_C {self.slope_C:.3f}")
        return "\n".join(lines) + "\n"


def _batch_pass_time(T: int, C: int, batch: int, repeats: int, rng: np.random.Generator) -> float:
    program = sweep_program(C)
    labels = (rng.random((batch, T, C)) < 0.05).astype(np.uint8)
    probs = rng.random((batch, T, C))
    run = lambda: apply_program_batch(probs, program, Mode.TRAIN_PROB, labels=labels)
    run()
    return best_time(run, repeats)


def scaling_sweep(
    T_values: Sequence[int] = (32, 64, 128, 256, 512),
    C_values: Sequence[int] = (64, 128, 256, 512, 1024),
    fixed_C: int = 1024,
    fixed_T: int = 512,
    batch: int = 8,
    repeats: int = 5,
    seed: int = 0,
) -> ScalingResult:
    """Minimum-of-repeats time of one teacher-forced batch pass over a sweep."""
    rng = np.random.default_rng(seed)
    tt = [_batch_pass_time(T, fixed_C, batch, repeats, rng) for T in T_values]
    ct = [_batch_pass_time(fixed_T, C, batch, repeats, rng) for C in C_values]
    return ScalingResult(list(T_values), tt, list(C_values), ct, fixed_C, fixed_T, batch)
