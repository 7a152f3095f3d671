import itertools

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from diffintersort.distance import RawDistances, reachability_distances, threshold_matrix
from diffintersort.graph import Dag, d_top, order_from_sequence, reachability, sample_er_dag
from diffintersort.score import (
    brute_force_best_order,
    score_of_order,
    score_of_potential_hard,
    sortranking,
    step_grad,
)


def argsort_desc_positions(p):
    return order_from_sequence(np.argsort(-p))


def test_two_node_example():
    D = np.array([[0.0, 3.0], [0.0, 0.0]])
    assert score_of_order(D, [0, 1]) == 3.0
    assert score_of_order(D, [1, 0]) == 0.0


def test_potential_example():
    D = np.zeros((3, 3))
    D[0, 2] = 4.0
    assert score_of_potential_hard(D, np.array([3.0, 1.0, 2.0])) == 4.0
    np.testing.assert_array_equal(step_grad([3.0, 1.0, 2.0])[0], [0, 1, 1])
    with pytest.raises(ValueError, match="tied"):
        score_of_potential_hard(D, np.array([1.0, 1.0, 2.0]))


@given(st.integers(1, 8), st.integers(0, 2**32 - 1))
def test_hard_potential_score_equals_order_score(d, seed):
    rng = np.random.default_rng(seed)
    D = rng.normal(size=(d, d))
    p = rng.permutation(d) + rng.uniform(0, 0.5, d)
    assert score_of_potential_hard(D, p) == pytest.approx(score_of_order(D, argsort_desc_positions(p)))
    # adding a constant changes nothing
    assert score_of_potential_hard(D, p + 17.0) == score_of_potential_hard(D, p)


def test_brute_force_matches_naive_enumeration(rng):
    for d in (1, 3, 6):
        D = rng.normal(size=(d, d))
        best = max(score_of_order(D, order_from_sequence(s)) for s in itertools.permutations(range(d)))
        order, score = brute_force_best_order(D)
        assert score == pytest.approx(best)
        assert score_of_order(D, order) == pytest.approx(score)


def test_brute_force_cap():
    with pytest.raises(ValueError, match="optimize_potential"):
        brute_force_best_order(np.zeros((10, 10)))


def test_symmetric_D_is_flat(rng):
    A = rng.normal(size=(5, 5))
    D = A + A.T
    np.fill_diagonal(D, 0)
    _, score = brute_force_best_order(D)
    assert score == pytest.approx(np.triu(D, 1).sum())
    for s in itertools.permutations(range(5)):
        assert score_of_order(D, order_from_sequence(s)) == pytest.approx(score)


def test_chain_reachability_optimum_is_topological():
    adj = np.diag(np.ones(4, int), 1)
    g = Dag(adj)
    order, _ = brute_force_best_order(reachability_distances(reachability(g)))
    assert d_top(g, order) == 0


def test_sortranking_chain():
    raw = RawDistances(np.array([[0, 2.0, 1.5], [0.05, 0, 2.0], [0.02, 0.04, 0]]), np.arange(3))
    assert sortranking(raw).tolist() == [0, 1, 2]


def test_sortranking_all_zero_rows_identity():
    raw = RawDistances(np.full((4, 4), np.nan), np.array([], dtype=int))
    assert sortranking(raw).tolist() == [0, 1, 2, 3]


def test_sortranking_non_intervened_after_positive_rows():
    m = np.full((3, 3), np.nan)
    m[2] = [1.0, 1.0, 0.0]
    raw = RawDistances(m, np.array([2]))
    assert sortranking(raw).tolist() == [1, 2, 0]


def test_sortranking_is_a_baseline_for_the_optimum(rng):
    for _ in range(10):
        g = sample_er_dag(6, 0.4, rng)
        raw = RawDistances(reachability(g) * rng.uniform(0.4, 2, (6, 6)) + rng.uniform(0, 0.25, (6, 6)), np.arange(6))
        dm = threshold_matrix(raw)
        best_order, best = brute_force_best_order(dm)
        sr = sortranking(raw)
        assert score_of_order(dm, sr) <= best + 1e-12
        assert d_top(g, sr) >= d_top(g, best_order)
