"""Temporal components and the history vectors they select.

Masks are indexed by 1-based step: bit ``i`` of a mask vector is stored at
array position ``i - 1``.
"""

from __future__ import annotations

from functools import lru_cache

import numba
import numpy as np

from .rules import TemporalComponent


def resolve_indices(tc: TemporalComponent, t: int) -> set[int]:
    """Past steps (1-based, all ``< t``) referenced by ``tc`` at step ``t``."""
    if t < 1:
        raise ValueError(f"step must be >= 1, got {t}")
    if tc.all_past:
        return set(range(1, t))
    out = set()
    for k in tc.indices:
        i = k if k > 0 else t + k
        if 1 <= i < t:
            out.add(i)
    return out


def build_mask_vector(tc: TemporalComponent, t: int, horizon: int) -> np.ndarray:
    if not 1 <= t <= horizon:
        raise ValueError(f"step {t} outside [1, {horizon}]")
    m = np.zeros(horizon, dtype=np.uint8)
    for i in resolve_indices(tc, t):
        m[i - 1] = 1
    return m


@lru_cache(maxsize=256)
def _mask_matrix(tc: TemporalComponent, horizon: int) -> np.ndarray:
    T = horizon
    if tc.all_past:
        m = np.tri(T, T, k=-1, dtype=np.uint8)
    else:
        m = np.zeros((T, T), dtype=np.uint8)
        for k in tc.indices:
            if k < 0:
                m += np.eye(T, T, k=k, dtype=np.uint8)
            elif k < T:
                # absolute visit k is visible from every later step
                m[k:, k - 1] = 1
        np.minimum(m, 1, out=m)
    m.flags.writeable = False
    return m


def build_mask_matrix(tc: TemporalComponent, horizon: int) -> np.ndarray:
    """``horizon x horizon`` strictly lower-triangular mask; row ``t-1`` is step ``t``."""
    if horizon < 0:
        raise ValueError("horizon must be non-negative")
    return _mask_matrix(tc, horizon)


def aggregate_history(record, mask: np.ndarray) -> np.ndarray:
    """OR of the visits selected by a single mask vector."""
    P = np.asarray(record)
    mask = np.asarray(mask)
    if mask.shape != (P.shape[0],):
        raise ValueError(f"mask length {mask.shape} does not match record length {P.shape[0]}")
    sel = P[mask.astype(bool)]
    if sel.shape[0] == 0:
        return np.zeros(P.shape[1], dtype=np.uint8)
    return np.bitwise_or.reduce(sel.astype(np.uint8), axis=0)


def boolean_matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Saturating boolean product: integer counts clamped to {0, 1}.

    Runs through float32 BLAS, which counts exactly up to 2**24 terms.
    """
    prod = np.matmul(a.astype(np.float32, copy=False), b.astype(np.float32, copy=False))
    return (prod > 0.5).astype(np.uint8)


@numba.njit(cache=True, nogil=True)
def _or_product_kernel(mask: np.ndarray, P: np.ndarray) -> np.ndarray:
    B, T, C = P.shape
    H = np.zeros((B, T, C), dtype=np.uint8)
    for b in range(B):
        for t in range(T):
            for s in range(t):
                if mask[t, s]:
                    for c in range(C):
                        H[b, t, c] |= P[b, s, c]
    return H


def or_product(mask: np.ndarray, P: np.ndarray) -> np.ndarray:
    """Direct boolean product ``H[t] = OR_{s: mask[t, s]} P[s]`` over a ``B x T x C`` batch.

    Only the strictly lower triangle of ``mask`` is read.
    """
    m = np.ascontiguousarray(mask, dtype=np.uint8)
    X = np.ascontiguousarray(P, dtype=np.uint8)
    return _or_product_kernel(m, X)


def _or_rows_bitset(P: np.ndarray, mask: np.ndarray) -> np.ndarray:
    T, C = P.shape
    packed = np.packbits(P.astype(bool), axis=1)
    out = np.zeros_like(packed)
    for t in range(T):
        idx = np.flatnonzero(mask[t])
        if idx.size:
            out[t] = np.bitwise_or.reduce(packed[idx], axis=0)
    return np.unpackbits(out, axis=1, count=C)


def aggregate_history_batch(record, mask: np.ndarray, method: str = "or") -> np.ndarray:
    """History matrix ``H = M P`` under boolean semantics.

    ``record`` may be ``T x C`` or a batch ``B x T x C`` sharing one mask.
    Methods: ``"or"`` (compiled OR loop, the default), ``"matmul"`` (float32
    BLAS product, thresholded) and ``"bitset"`` (OR of packed rows).  All three
    give identical results on strictly lower-triangular masks.
    """
    P = np.asarray(record)
    mask = np.asarray(mask)
    T = P.shape[-2]
    if mask.shape != (T, T):
        raise ValueError(f"mask shape {mask.shape} does not match record length {T}")
    if method == "or":
        H = or_product(mask, P.reshape((-1,) + P.shape[-2:]))
        return H.reshape(P.shape)
    if method == "matmul":
        return boolean_matmul(mask, P)
    if method == "bitset":
        if P.ndim == 2:
            return _or_rows_bitset(P, mask)
        return np.stack([_or_rows_bitset(p, mask) for p in P])
    raise ValueError(f"unknown method {method!r}")
