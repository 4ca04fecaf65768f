"""A counts-based next-visit model standing in for a neural sequence generator.

Each code's probability is conditioned on a visit-index bucket and a hash
bucket of the previous visit.  Cell estimates are additively smoothed toward
the Laplace-smoothed marginal of their index bucket:

    q[b, c]    = (n[b, c] + 1) / (m[b] + 2)
    p[b, h, c] = (n[b, h, c] + k * q[b, c]) / (m[b, h] + k)

so every probability lies strictly inside (0, 1).  Record length comes from a
stop probability smoothed the same way, and visit 1 (the label visit) is
drawn from the empirical distribution of training label visits.

Checkpoint format (``.npz``, ``format_version = 1``): int64 arrays
``counts`` (K x H x C), ``visits`` (K x H), ``stops`` (K x H),
``continues`` (K x H), ``label_visits`` (L x C, uint8) and ``label_counts``
(L,), plus scalars ``prior_strength`` and ``hash_salt``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np

from .engine import constrain_training_batch
from .grouping import CompiledRuleProgram

FORMAT_VERSION = 1
INDEX_BUCKETS = 6
HASH_BUCKETS = 32


def index_bucket(t: int | np.ndarray) -> np.ndarray:
    """1 -> 0, 2 -> 1, 3..4 -> 2, 5..8 -> 3, 9..16 -> 4, 17+ -> 5."""
    if isinstance(t, (int, np.integer)):
        return min(max(int(t) - 1, 0).bit_length(), INDEX_BUCKETS - 1)
    t = np.asarray(t, dtype=np.int64)
    b = np.ceil(np.log2(np.maximum(t, 1))).astype(np.int64)
    b = np.where(t <= 1, 0, b)
    return np.minimum(b, INDEX_BUCKETS - 1)


@dataclass(eq=False)
class FreqModel:
    vocab_size: int
    counts: np.ndarray = None
    visits: np.ndarray = None
    stops: np.ndarray = None
    continues: np.ndarray = None
    label_visits: np.ndarray = None
    label_counts: np.ndarray = None
    prior_strength: float = 1.0
    hash_salt: int = 0
    _cache: dict = field(default_factory=dict, repr=False)

    def __post_init__(self) -> None:
        K, H, C = INDEX_BUCKETS, HASH_BUCKETS, self.vocab_size
        if self.counts is None:
            self.counts = np.zeros((K, H, C), dtype=np.int64)
            self.visits = np.zeros((K, H), dtype=np.int64)
            self.stops = np.zeros((K, H), dtype=np.int64)
            self.continues = np.zeros((K, H), dtype=np.int64)
            self.label_visits = np.zeros((0, C), dtype=np.uint8)
            self.label_counts = np.zeros(0, dtype=np.int64)
        rng = np.random.default_rng(self.hash_salt)
        self._hash_weights = rng.integers(1, 2**20, size=C, dtype=np.int64)

    # --- state hashing -------------------------------------------------

    def hash_bucket(self, prev: np.ndarray) -> np.ndarray:
        """Bucket 0 means "no previous visit"; otherwise 1..H-1."""
        prev = np.asarray(prev, dtype=np.int64)
        return (prev @ self._hash_weights) % (HASH_BUCKETS - 1) + 1

    def _states(self, P: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Bucket pair used to predict each visit of ``P`` (teacher forcing)."""
        T = P.shape[0]
        b = index_bucket(np.arange(1, T + 1))
        h = np.zeros(T, dtype=np.int64)
        if T > 1:
            h[1:] = self.hash_bucket(P[:-1])
        return b, h

    # --- fitting -------------------------------------------------------

    def update(self, record) -> None:
        P = np.asarray(record, dtype=np.uint8)
        T = P.shape[0]
        if T == 0:
            return
        b, h = self._states(P)
        np.add.at(self.counts, (b, h), P.astype(np.int64))
        np.add.at(self.visits, (b, h), 1)
        if T > 1:
            np.add.at(self.continues, (b[1:], h[1:]), 1)
        end_b = index_bucket(T + 1)
        end_h = self.hash_bucket(P[-1])
        self.stops[end_b, end_h] += 1
        first = P[0]
        match = np.flatnonzero((self.label_visits == first).all(axis=1)) if len(self.label_visits) else []
        if len(match):
            self.label_counts[match[0]] += 1
        else:
            self.label_visits = np.vstack([self.label_visits, first[None]])
            self.label_counts = np.append(self.label_counts, 1)
        self._cache.clear()

    @classmethod
    def fit(cls, dataset: Iterable, vocab_size: int | None = None, prior_strength: float = 1.0, hash_salt: int = 0) -> "FreqModel":
        records = [np.asarray(r, dtype=np.uint8) for r in dataset]
        if vocab_size is None:
            if not records:
                raise ValueError("vocab_size is required for an empty dataset")
            vocab_size = records[0].shape[1]
        model = cls(vocab_size, prior_strength=prior_strength, hash_salt=hash_salt)
        for r in records:
            model.update(r)
        return model

    # --- probabilities -------------------------------------------------

    def _smooth(self, num: np.ndarray, den: np.ndarray, parent: np.ndarray) -> np.ndarray:
        k = self.prior_strength
        return (num + k * parent) / (den + k)

    def bucket_marginals(self) -> np.ndarray:
        n_b = self.counts.sum(axis=1)
        m_b = self.visits.sum(axis=1)
        return (n_b + 1.0) / (m_b[:, None] + 2.0)

    def table(self) -> np.ndarray:
        """``K x H x C`` probability table."""
        if "table" not in self._cache:
            q = self.bucket_marginals()
            self._cache["table"] = self._smooth(self.counts, self.visits[:, :, None], q[:, None, :])
        return self._cache["table"]

    def stop_table(self) -> np.ndarray:
        if "stop" not in self._cache:
            s_b = self.stops.sum(axis=1)
            e_b = s_b + self.continues.sum(axis=1)
            q = (s_b + 1.0) / (e_b + 2.0)
            self._cache["stop"] = self._smooth(self.stops, self.stops + self.continues, q[:, None])
        return self._cache["stop"]

    def predict(self, prefix) -> np.ndarray:
        prefix = np.asarray(prefix)
        t = prefix.shape[0] + 1
        b = int(index_bucket(t))
        h = int(self.hash_bucket(prefix[-1])) if prefix.shape[0] else 0
        return self.table()[b, h].copy()

    def predict_record(self, record) -> np.ndarray:
        """Teacher-forced probabilities for every visit of ``record``."""
        P = np.asarray(record, dtype=np.uint8)
        if P.shape[0] == 0:
            return np.zeros((0, self.vocab_size))
        b, h = self._states(P)
        q = self.bucket_marginals()
        return self._smooth(self.counts[b, h], self.visits[b, h][:, None], q[b])

    def stop_probability(self, prefix) -> float:
        prefix = np.asarray(prefix)
        t = prefix.shape[0] + 1
        h = int(self.hash_bucket(prefix[-1])) if prefix.shape[0] else 0
        return float(self.stop_table()[int(index_bucket(t)), h])

    def label_visit(self, rng: np.random.Generator) -> np.ndarray:
        if not len(self.label_counts):
            return np.zeros(self.vocab_size, dtype=np.uint8)
        k = rng.choice(len(self.label_counts), p=self.label_counts / self.label_counts.sum())
        return self.label_visits[k].copy()

    # --- persistence ---------------------------------------------------

    def save(self, path: str | Path) -> None:
        with open(path, "wb") as fh:
            np.savez(
                fh,
                format_version=np.int64(FORMAT_VERSION),
                vocab_size=np.int64(self.vocab_size),
                counts=self.counts,
                visits=self.visits,
                stops=self.stops,
                continues=self.continues,
                label_visits=self.label_visits,
                label_counts=self.label_counts,
                prior_strength=np.float64(self.prior_strength),
                hash_salt=np.int64(self.hash_salt),
            )

    @classmethod
    def load(cls, path: str | Path) -> "FreqModel":
        with np.load(path, allow_pickle=False) as z:
            version = int(z["format_version"])
            if version != FORMAT_VERSION:
                raise ValueError(f"unsupported checkpoint version {version}")
            return cls(
                int(z["vocab_size"]),
                counts=z["counts"],
                visits=z["visits"],
                stops=z["stops"],
                continues=z["continues"],
                label_visits=z["label_visits"],
                label_counts=z["label_counts"],
                prior_strength=float(z["prior_strength"]),
                hash_salt=int(z["hash_salt"]),
            )


def nll(probs: np.ndarray, labels: np.ndarray, eps: float = 1e-12) -> float:
    """Summed Bernoulli negative log-likelihood of binary ``labels``."""
    p = np.clip(probs, eps, 1.0 - eps)
    y = np.asarray(labels, dtype=bool)
    return float(-(np.log(p[y]).sum() + np.log1p(-p[~y]).sum()))


@dataclass
class EpochLoss:
    epoch: int
    constrained: float
    unconstrained: float


def train_constrained(
    dataset: Iterable,
    program: CompiledRuleProgram | None,
    epochs: int = 3,
    seed: int = 0,
    vocab_size: int | None = None,
    prior_strength: float = 1.0,
) -> tuple[FreqModel, list[EpochLoss]]:
    """Online (predict-then-update) fitting with rule-adjusted losses.

    Each record is scored with the current counts, the probabilities are passed
    through teacher-forced enforcement, and the mean per-cell NLL is recorded
    for both the adjusted and raw probabilities before the counts are updated.
    """
    records = [np.asarray(r, dtype=np.uint8) for r in dataset]
    if vocab_size is None:
        vocab_size = records[0].shape[1] if records else program.vocab_size
    model = FreqModel(vocab_size, prior_strength=prior_strength)
    rng = np.random.default_rng(seed)
    trace = []
    for epoch in range(1, epochs + 1):
        tot_c = tot_u = 0.0
        cells = 0
        for k in rng.permutation(len(records)):
            P = records[k]
            if P.shape[0] == 0:
                continue
            probs = model.predict_record(P)
            adjusted = probs if program is None else constrain_training_batch(probs, P, program)
            tot_u += nll(probs, P)
            tot_c += nll(adjusted, P)
            cells += P.size
            model.update(P)
        trace.append(EpochLoss(epoch, tot_c / max(cells, 1), tot_u / max(cells, 1)))
    return model, trace
