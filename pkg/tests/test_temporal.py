import numpy as np
import pytest
from hypothesis import given, strategies as st

from _gen import TEMPORALS, random_record
from seqrules.rules import ALL_PAST, STATIC, TemporalComponent
from seqrules.temporal import (
    aggregate_history, aggregate_history_batch, boolean_matmul, build_mask_matrix,
    build_mask_vector, or_product, resolve_indices,
)

TC = TemporalComponent.of(-1, 1, 4)


@pytest.mark.parametrize("t, expected", [(1, set()), (2, {1}), (3, {1, 2}), (10, {1, 4, 9})])
def test_resolve_indices_worked_example(t, expected):
    assert resolve_indices(TC, t) == expected


def test_resolve_rejects_step_zero():
    with pytest.raises(ValueError):
        resolve_indices(TC, 0)


def test_mask_vector_examples():
    assert np.flatnonzero(build_mask_vector(TC, 10, 12)).tolist() == [0, 3, 8]
    assert not build_mask_vector(STATIC, 5, 8).any()
    assert build_mask_vector(ALL_PAST, 4, 5).tolist() == [1, 1, 1, 0, 0]


def test_mask_matrix_examples():
    assert build_mask_matrix(TemporalComponent.of(-1), 3).tolist() == [[0, 0, 0], [1, 0, 0], [0, 1, 0]]
    assert build_mask_matrix(TemporalComponent.of(1), 3).tolist() == [[0, 0, 0], [1, 0, 0], [1, 0, 0]]
    assert np.flatnonzero(build_mask_matrix(TC, 10)[9]).tolist() == [0, 3, 8]


@given(st.sampled_from(TEMPORALS), st.integers(0, 40))
def test_mask_matrix_rows_are_mask_vectors(tc, T):
    M = build_mask_matrix(tc, T)
    assert M.shape == (T, T)
    assert not np.triu(M).any()
    for t in range(1, T + 1):
        assert np.array_equal(M[t - 1], build_mask_vector(tc, t, T))


def test_aggregate_examples():
    P = np.array([[1, 0, 1], [0, 1, 0]], dtype=np.uint8)
    assert aggregate_history(P, np.array([1, 1])).tolist() == [1, 1, 1]
    assert aggregate_history(P, np.array([0, 0])).tolist() == [0, 0, 0]
    with pytest.raises(ValueError):
        aggregate_history(P, np.array([1]))


def test_aggregate_matches_naive_loop():
    rng = np.random.default_rng(3)
    P = random_record(rng, 6, 8)
    m = build_mask_vector(TemporalComponent.of(-1, 2), 5, 6)
    expected = [int(P[1, c] or P[3, c]) for c in range(8)]
    assert aggregate_history(P, m).tolist() == expected


def test_batch_aggregate_examples():
    P = np.array([[1, 0], [0, 1], [1, 1]], dtype=np.uint8)
    M = build_mask_matrix(TemporalComponent.of(-1), 3)
    assert aggregate_history_batch(P, M).tolist() == [[0, 0], [1, 0], [0, 1]]
    assert not aggregate_history_batch(P, np.zeros((3, 3), dtype=np.uint8)).any()
    with pytest.raises(ValueError):
        aggregate_history_batch(P, np.zeros((2, 2)))
    with pytest.raises(ValueError):
        aggregate_history_batch(P, M, method="fancy")


def test_batch_all_past_matches_per_step():
    rng = np.random.default_rng(11)
    P = random_record(rng, 20, 16)
    M = build_mask_matrix(ALL_PAST, 20)
    H = aggregate_history_batch(P, M)
    for t in range(20):
        assert np.array_equal(H[t], aggregate_history(P, M[t]))


@given(st.integers(0, 2**31), st.sampled_from(TEMPORALS), st.integers(1, 32), st.integers(1, 64))
def test_three_routes_agree_with_per_step(seed, tc, T, C):
    rng = np.random.default_rng(seed)
    P = random_record(rng, T, C, density=float(rng.uniform(0.02, 0.6)))
    M = build_mask_matrix(tc, T)
    ref = np.stack([aggregate_history(P, M[t]) for t in range(T)])
    for method in ("or", "matmul", "bitset"):
        assert np.array_equal(aggregate_history_batch(P, M, method=method), ref), method


def test_batched_records_share_the_mask():
    rng = np.random.default_rng(5)
    X = (rng.random((4, 9, 7)) < 0.3).astype(np.uint8)
    M = build_mask_matrix(TemporalComponent.of(-2, 1), 9)
    H = aggregate_history_batch(X, M)
    for b in range(4):
        assert np.array_equal(H[b], aggregate_history_batch(X[b], M, method="bitset"))
    assert np.array_equal(H, aggregate_history_batch(X, M, method="bitset"))
    assert np.array_equal(or_product(M, X), boolean_matmul(M, X))


@given(st.integers(0, 2**31), st.sampled_from(TEMPORALS), st.integers(2, 24))
def test_causality_under_perturbation(seed, tc, T):
    rng = np.random.default_rng(seed)
    P = random_record(rng, T, 10)
    j = int(rng.integers(T))
    Q = P.copy()
    Q[j] ^= 1
    M = build_mask_matrix(tc, T)
    H1, H2 = aggregate_history_batch(P, M), aggregate_history_batch(Q, M)
    assert np.array_equal(H1[: j + 1], H2[: j + 1])


@given(st.integers(0, 2**31), st.integers(1, 30))
def test_all_past_history_is_monotone(seed, T):
    P = random_record(np.random.default_rng(seed), T, 12, density=0.1)
    H = aggregate_history_batch(P, build_mask_matrix(ALL_PAST, T))
    assert (np.diff(H.astype(np.int8), axis=0) >= 0).all()
