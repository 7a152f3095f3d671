"""Intersort score over orders and potentials, exhaustive oracle and a row-sum baseline."""

from __future__ import annotations

import itertools

import numpy as np

from .distance import DEFAULT_C, DEFAULT_EPS, DistanceMatrix, RawDistances, threshold_matrix
from .graph import check_order

BRUTE_FORCE_MAX_D = 9


def _as_matrix(D) -> np.ndarray:
    D = D.D if isinstance(D, DistanceMatrix) else np.asarray(D, dtype=np.float64)
    if D.ndim != 2 or D.shape[0] != D.shape[1]:
        raise ValueError(f"distance matrix must be square, got shape {D.shape}")
    return D


def step_grad(p) -> np.ndarray:
    """``1[p_i > p_j]`` as a float matrix."""
    p = np.asarray(p, dtype=np.float64)
    return (p[:, None] > p[None, :]).astype(np.float64)


def score_of_order(D, order) -> float:
    """Sum of ``D_ij`` over pairs with ``i`` placed before ``j``."""
    D = _as_matrix(D)
    order = check_order(order, D.shape[0])
    before = order[:, None] < order[None, :]
    return float(np.sum(D[before]))


def score_of_potential_hard(D, p) -> float:
    D = _as_matrix(D)
    p = np.asarray(p, dtype=np.float64)
    if p.shape != (D.shape[0],):
        raise ValueError(f"potential length {p.shape} does not match D of size {D.shape[0]}")
    if np.unique(p).size != p.size:
        raise ValueError("potential has tied entries")
    return float(np.sum(D * step_grad(p)))


def brute_force_best_order(D) -> tuple[np.ndarray, float]:
    """Exhaustive maximiser of :func:`score_of_order` (first one found on ties)."""
    D = _as_matrix(D)
    d = D.shape[0]
    if d > BRUTE_FORCE_MAX_D:
        raise ValueError(f"brute force is capped at d={BRUTE_FORCE_MAX_D}; use optimize_potential for d={d}")
    seqs = np.array(list(itertools.permutations(range(d))), dtype=np.int64).reshape(-1, d)
    scores = np.zeros(seqs.shape[0])
    for a in range(d):
        for b in range(a + 1, d):
            scores += D[seqs[:, a], seqs[:, b]]
    best = int(np.argmax(scores))
    order = np.empty(d, dtype=np.int64)
    order[seqs[best]] = np.arange(d)
    return order, float(scores[best])


def sortranking(raw: RawDistances, eps: float = DEFAULT_EPS, c: float = DEFAULT_C) -> np.ndarray:
    """Rank variables by the row sums of the thresholded matrix, largest first.

    A simplified stand-in for Intersort's initial ranking step (results are
    labelled ``sortranking-approx``). Non-intervened variables have row sum 0
    and ties are broken by index.
    """
    D = threshold_matrix(raw, eps, c).D
    seq = np.argsort(-D.sum(axis=1), kind="stable")
    order = np.empty_like(seq)
    order[seq] = np.arange(seq.size)
    return order
