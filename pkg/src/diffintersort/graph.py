"""Random DAGs, causal orders and graph-comparison metrics.

Orders are represented by *positions*: ``order[i]`` is the 0-based slot of
node ``i`` (node ``i`` comes before node ``j`` iff ``order[i] < order[j]``).
Use :func:`order_from_sequence` to build one from a list of nodes.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ._rng import as_generator


@dataclass(frozen=True)
class Dag:
    """Binary adjacency matrix; ``adj[i, j] == 1`` means edge ``i -> j``."""

    adj: np.ndarray

    def __post_init__(self):
        adj = np.asarray(self.adj)
        if adj.ndim != 2 or adj.shape[0] != adj.shape[1]:
            raise ValueError(f"adjacency must be square, got shape {adj.shape}")
        adj = (adj != 0).astype(np.int8)
        if np.any(np.diag(adj)):
            raise ValueError("self loops are not allowed")
        if topological_sort(adj) is None:
            raise ValueError("adjacency matrix contains a directed cycle")
        object.__setattr__(self, "adj", adj)

    @property
    def d(self) -> int:
        return self.adj.shape[0]

    @property
    def n_edges(self) -> int:
        return int(self.adj.sum())

    def parents(self, j: int) -> np.ndarray:
        return np.flatnonzero(self.adj[:, j])

    def topological_order(self) -> np.ndarray:
        """A sequence of nodes in which every cause precedes its effects."""
        return topological_sort(self.adj)

    def permute(self, perm: np.ndarray) -> "Dag":
        """Relabel so that old node ``perm[k]`` becomes node ``k``."""
        perm = np.asarray(perm)
        return Dag(self.adj[np.ix_(perm, perm)])


def topological_sort(adj: np.ndarray) -> np.ndarray | None:
    """Kahn's algorithm, smallest ready index first; ``None`` if ``adj`` has a cycle."""
    adj = np.asarray(adj) != 0
    d = adj.shape[0]
    indeg = adj.sum(axis=0).astype(np.int64)
    ready = np.flatnonzero(indeg == 0).tolist()
    heapq.heapify(ready)
    out = []
    while ready:
        i = heapq.heappop(ready)
        out.append(i)
        for j in np.flatnonzero(adj[i]):
            indeg[j] -= 1
            if indeg[j] == 0:
                heapq.heappush(ready, int(j))
    if len(out) != d:
        return None
    return np.asarray(out, dtype=np.int64)


def is_dag(adj: np.ndarray) -> bool:
    adj = np.asarray(adj)
    return not np.any(np.diag(adj)) and topological_sort(adj) is not None


def sample_er_dag(d: int, p_e: float, seed=None) -> Dag:
    """Erdos-Renyi DAG: each forward pair of a hidden random node order gets an edge w.p. ``p_e``."""
    if d < 1:
        raise ValueError(f"d must be >= 1, got {d}")
    if not 0.0 <= p_e <= 1.0:
        raise ValueError(f"edge probability must lie in [0, 1], got {p_e}")
    rng = as_generator(seed)
    upper = np.triu(rng.random((d, d)) < p_e, k=1)
    perm = rng.permutation(d)
    adj = np.zeros((d, d), dtype=np.int8)
    # hidden slot k holds node perm[k]
    adj[np.ix_(perm, perm)] = upper
    return Dag(adj)


def sample_sf_dag(d: int, m: int, seed=None) -> Dag:
    """Barabasi-Albert scale-free DAG with ``m`` edges per newly attached node.

    The first ``m`` nodes form the seed core (no edges among them); node
    ``k >= m`` attaches to ``m`` distinct earlier nodes chosen proportionally
    to degree + 1. Edges point from the earlier to the later node, then the
    labels are shuffled.
    """
    if d < 1 or m < 1:
        raise ValueError(f"need d >= 1 and m >= 1, got d={d}, m={m}")
    if m >= d:
        raise ValueError(f"attachment count m={m} must be smaller than d={d}")
    rng = as_generator(seed)
    adj = np.zeros((d, d), dtype=np.int8)
    degree = np.zeros(d)
    for k in range(m, d):
        weights = degree[:k] + 1.0
        targets = rng.choice(k, size=m, replace=False, p=weights / weights.sum())
        adj[targets, k] = 1
        degree[targets] += 1
        degree[k] += m
    perm = rng.permutation(d)
    return Dag(adj).permute(perm)


def order_from_sequence(seq) -> np.ndarray:
    """Positions from a node sequence: ``order[seq[k]] = k``."""
    seq = np.asarray(seq, dtype=np.int64)
    order = np.empty_like(seq)
    order[seq] = np.arange(len(seq))
    return order


def sequence_from_order(order) -> np.ndarray:
    return np.argsort(np.asarray(order), kind="stable")


def check_order(order, d: int) -> np.ndarray:
    order = np.asarray(order, dtype=np.int64)
    if order.shape != (d,) or not np.array_equal(np.sort(order), np.arange(d)):
        raise ValueError(f"not a permutation of 0..{d - 1}: {order}")
    return order


def d_top(g: Dag, order) -> int:
    """Number of edges whose cause is placed after its effect."""
    order = check_order(order, g.d)
    src, dst = np.nonzero(g.adj)
    return int(np.sum(order[src] > order[dst]))


def _check_pair(pred, truth):
    pred = np.asarray(pred) != 0
    truth = np.asarray(truth) != 0
    if pred.shape != truth.shape or pred.ndim != 2 or pred.shape[0] != pred.shape[1]:
        raise ValueError(f"shape mismatch: {pred.shape} vs {truth.shape}")
    return pred, truth


def shd(pred, truth) -> int:
    """Structural Hamming distance; a reversed edge costs 1."""
    pred, truth = _check_pair(pred, truth)
    diff = pred != truth
    # a pair {i, j} counts once whether it is missing, extra or reversed
    pair_diff = np.triu(diff | diff.T, k=1)
    return int(pair_diff.sum())


def f1_edges(pred, truth) -> float:
    pred, truth = _check_pair(pred, truth)
    tp = int(np.sum(pred & truth))
    n_pred, n_true = int(pred.sum()), int(truth.sum())
    if n_pred == 0 and n_true == 0:
        return 1.0
    if tp == 0:
        return 0.0
    precision, recall = tp / n_pred, tp / n_true
    return 2 * precision * recall / (precision + recall)


def reachability(g: Dag) -> np.ndarray:
    """Transitive closure: ``R[i, j] = 1`` iff a directed path ``i -> ... -> j`` exists."""
    d = g.d
    R = np.zeros((d, d), dtype=np.int8)
    # walk nodes in reverse topological order so each child's closure is ready
    for i in g.topological_order()[::-1]:
        children = np.flatnonzero(g.adj[i])
        if children.size:
            R[i] = np.maximum(g.adj[i], R[children].max(axis=0))
    return R


def write_edge_list(g: Dag, path) -> None:
    """``d=<n>`` header, then ``i j`` per edge with 1-based indices."""
    src, dst = np.nonzero(g.adj)
    lines = [f"d={g.d}"] + [f"{i + 1} {j + 1}" for i, j in zip(src, dst)]
    Path(path).write_text("\n".join(lines) + "\n")


def read_edge_list(path) -> Dag:
    lines = [ln.strip() for ln in Path(path).read_text().splitlines() if ln.strip()]
    if not lines or not lines[0].startswith("d="):
        raise ValueError(f"{path}: missing 'd=<n>' header")
    d = int(lines[0][2:])
    adj = np.zeros((d, d), dtype=np.int8)
    for ln in lines[1:]:
        i, j = (int(x) for x in ln.split())
        adj[i - 1, j - 1] = 1
    return Dag(adj)
