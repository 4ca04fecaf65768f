"""Dataset text format and a synthetic record generator with planted rules.

Format::

    #VOCAB <n> #MAXT <t>
    <visit> <visit> ...        one record per line
    visit := sorted comma-separated code indices, or "-" when empty

An empty line is a record with no visits.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .miner import FIRST_VISIT, PREVIOUS_VISIT
from .rules import ALL_PAST, Literal, Record, Rule

_HEADER = re.compile(r"^#VOCAB\s+(\d+)\s+#MAXT\s+(\d+)\s*$")


class DatasetFormatError(ValueError):
    pass


def format_visit(visit: np.ndarray) -> str:
    codes = np.flatnonzero(visit)
    return ",".join(map(str, codes.tolist())) if codes.size else "-"


def format_record(record) -> str:
    return " ".join(format_visit(v) for v in np.asarray(record))


def dump_dataset(records: Sequence, vocab_size: int, max_t: int | None = None) -> str:
    arrays = [np.asarray(r) for r in records]
    if max_t is None:
        max_t = max((a.shape[0] for a in arrays), default=0)
    lines = [f"#VOCAB {vocab_size} #MAXT {max_t}"]
    lines.extend(format_record(a) for a in arrays)
    return "\n".join(lines) + "\n"


def write_dataset(records: Sequence, path: str | Path, vocab_size: int, max_t: int | None = None) -> None:
    Path(path).write_text(dump_dataset(records, vocab_size, max_t))


def _parse_visit(tok: str, C: int, lineno: int) -> list[int]:
    if tok == "-":
        return []
    try:
        codes = [int(x) for x in tok.split(",")]
    except ValueError:
        raise DatasetFormatError(f"line {lineno}: bad visit {tok!r}") from None
    if codes != sorted(set(codes)):
        raise DatasetFormatError(f"line {lineno}: codes must be sorted and distinct in {tok!r}")
    if codes and not (0 <= codes[0] and codes[-1] < C):
        raise DatasetFormatError(f"line {lineno}: code outside vocabulary of size {C}")
    return codes


def load_dataset(text: str) -> tuple[list[Record], int, int]:
    """Parse dataset text; returns ``(records, vocab_size, max_t)``."""
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines:
        raise DatasetFormatError("missing header")
    m = _HEADER.match(lines[0])
    if not m:
        raise DatasetFormatError(f"line 1: expected '#VOCAB <n> #MAXT <t>', got {lines[0]!r}")
    C, max_t = int(m.group(1)), int(m.group(2))
    records = []
    for lineno, line in enumerate(lines[1:], start=2):
        visits = [_parse_visit(tok, C, lineno) for tok in line.split()]
        if len(visits) > max_t:
            raise DatasetFormatError(f"line {lineno}: {len(visits)} visits exceeds #MAXT {max_t}")
        records.append(Record.from_codes(visits, C))
    return records, C, max_t


def read_dataset(path: str | Path) -> tuple[list[Record], int, int]:
    return load_dataset(Path(path).read_text())


# --- synthetic data ------------------------------------------------------


@dataclass
class SynthConfig:
    n_records: int = 2000
    vocab_size: int = 48
    min_visits: int = 3
    max_visits: int = 12
    noise_low: float = 0.02
    noise_high: float = 0.08
    planted: bool = True
    seed: int = 0
    demographic_groups: tuple[tuple[int, ...], ...] = ((0, 1), (2, 3, 4))


@dataclass
class SynthMeta:
    demographic_groups: list[list[int]]
    planted: list[Rule] = field(default_factory=list)
    weak_pair: tuple[int, int] | None = None

    def to_text(self) -> str:
        lines = ["GROUPS " + " ".join(",".join(map(str, g)) for g in self.demographic_groups)]
        lines.extend(f"PLANTED {r.id}" for r in self.planted)
        return "\n".join(lines) + "\n"


def read_groups(text: str) -> list[list[int]]:
    """Demographic groups from a meta file's ``GROUPS`` line or a ``0,1 2,3,4`` string."""
    for line in text.splitlines():
        if line.startswith("GROUPS"):
            text = line[len("GROUPS"):]
            break
    return [[int(c) for c in g.split(",")] for g in text.split()]


def _planted_layout(base: int) -> dict[str, int]:
    names = ["cooc_a", "cooc_b", "forbid", "prec_a", "prec_b", "persist", "weak_a", "weak_b"]
    return {n: base + k for k, n in enumerate(names)}


def synthesize(config: SynthConfig = SynthConfig()) -> tuple[list[Record], SynthMeta]:
    """Random records: a demographic label visit followed by noisy clinical visits.

    With ``planted=True`` one instance of each minable pattern is embedded on
    its own codes, plus a co-occurrence pair kept deliberately below the
    default count threshold.
    """
    rng = np.random.default_rng(config.seed)
    C = config.vocab_size
    groups = [list(g) for g in config.demographic_groups]
    base = max(c for g in groups for c in g) + 1
    layout = _planted_layout(base)
    first_noise = max(layout.values()) + 1 if config.planted else base
    if first_noise >= C:
        raise ValueError(f"vocab_size {C} too small for the planted layout")
    noise = np.zeros(C)
    noise[first_noise:] = rng.uniform(config.noise_low, config.noise_high, C - first_noise)
    lengths = rng.integers(config.min_visits, config.max_visits + 1, size=config.n_records)
    female = groups[0][1] if len(groups[0]) > 1 else None

    records = []
    weak_budget = 5
    for T in lengths:
        P = np.zeros((T, C), dtype=np.uint8)
        for g in groups:
            P[0, g[rng.integers(len(g))]] = 1
        P[1:] = rng.random((T - 1, C)) < noise
        if config.planted:
            L = layout
            clin = slice(1, T)
            a = rng.random(T - 1) < 0.15
            P[clin, L["cooc_a"]] = a
            P[clin, L["cooc_b"]] = a & (rng.random(T - 1) < 0.5)
            if female is None or not P[0, female]:
                P[clin, L["forbid"]] = rng.random(T - 1) < 0.2
            pa = rng.random(T - 1) < 0.1
            P[clin, L["prec_a"]] = pa
            if pa.any():
                first = 1 + int(np.argmax(pa))
                P[first + 1:, L["prec_b"]] = rng.random(T - first - 1) < 0.3
            onset = np.flatnonzero(rng.random(T - 1) < 0.1)
            if onset.size:
                P[1 + onset[0]:, L["persist"]] = 1
            P[clin, L["weak_a"]] = rng.random(T - 1) < 0.1
            if weak_budget and P[1:, L["weak_a"]].any():
                t = 1 + int(np.argmax(P[1:, L["weak_a"]]))
                P[t, L["weak_b"]] = 1
                weak_budget -= 1
        records.append(Record(P, C))

    meta = SynthMeta(groups)
    if config.planted:
        L = layout
        meta.planted = [
            Rule(f"cooc_{L['cooc_b']}_{L['cooc_a']}", L["cooc_a"], 1.0, (Literal.cur(L["cooc_b"]),)),
            Rule(f"prec_{L['prec_a']}_{L['prec_b']}", L["prec_b"], 0.0, (Literal.past(L["prec_a"], negated=True),), ALL_PAST),
            Rule(f"persist_{L['persist']}", L["persist"], 1.0, (Literal.past(L["persist"]),), PREVIOUS_VISIT),
        ]
        if female is not None:
            meta.planted.insert(1, Rule(f"forbid_{female}_{L['forbid']}", L["forbid"], 0.0, (Literal.past(female),), FIRST_VISIT))
        meta.weak_pair = (L["weak_a"], L["weak_b"])
    return records, meta

