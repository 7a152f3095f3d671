"""Marginal 1-Wasserstein distances and the thresholded distance matrix."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .scm import InterventionalDataset

DEFAULT_EPS = 0.3
DEFAULT_C = 0.5


def _quantiles(x_sorted: np.ndarray, n: int) -> np.ndarray:
    m = x_sorted.size
    if m == n:
        return x_sorted
    grid = (np.arange(n) + 0.5) / n
    knots = (np.arange(m) + 0.5) / m
    return np.interp(grid, knots, x_sorted)


def wasserstein1d(a, b) -> float:
    """Empirical W1 between two 1-D samples.

    Equal sizes: mean absolute difference of the sorted samples (exact).
    Unequal sizes: both quantile functions are linearly interpolated on the
    midpoint grid of ``max(len(a), len(b))`` levels.
    """
    a = np.sort(np.asarray(a, dtype=np.float64).ravel())
    b = np.sort(np.asarray(b, dtype=np.float64).ravel())
    if a.size == 0 or b.size == 0:
        raise ValueError("wasserstein1d needs two non-empty samples")
    n = max(a.size, b.size)
    return float(np.mean(np.abs(_quantiles(a, n) - _quantiles(b, n))))


@dataclass
class RawDistances:
    """``matrix[i, j]`` = W1 between the observational and ``do(X_i)`` marginals of ``X_j``.

    Rows of variables that were not intervened on are NaN.
    """

    matrix: np.ndarray
    targets: np.ndarray

    @property
    def d(self) -> int:
        return self.matrix.shape[0]

    @property
    def present(self) -> np.ndarray:
        mask = np.zeros(self.d, dtype=bool)
        mask[self.targets] = True
        return mask


def build_raw_distances(ds: InterventionalDataset) -> RawDistances:
    if not ds.envs:
        raise ValueError("dataset has no interventional environments")
    d = ds.d
    raw = np.full((d, d), np.nan)
    obs_sorted = np.sort(ds.obs, axis=0)
    for i, X in ds.envs.items():
        raw[i] = [wasserstein1d(obs_sorted[:, j], X[:, j]) for j in range(d)]
    return RawDistances(raw, ds.targets)


@dataclass
class DistanceMatrix:
    D: np.ndarray
    eps: float
    c: float
    targets: np.ndarray

    @property
    def d(self) -> int:
        return self.D.shape[0]


def threshold_matrix(raw: RawDistances, eps: float = DEFAULT_EPS, c: float = DEFAULT_C, d: int | None = None) -> DistanceMatrix:
    """``D_ij = (raw_ij - eps) + c d 1[raw_ij > eps]`` on intervened rows, 0 elsewhere and on the diagonal.

    Sub-threshold entries stay negative on purpose: placing ``i`` before such
    a ``j`` costs ``eps - raw_ij``.
    """
    if not eps > 0:
        raise ValueError(f"eps must be positive, got {eps}")
    if c < 0:
        raise ValueError(f"c must be non-negative, got {c}")
    d = raw.d if d is None else d
    D = np.zeros((raw.d, raw.d))
    rows = raw.targets
    R = raw.matrix[rows]
    D[rows] = (R - eps) + c * d * (R > eps)
    np.fill_diagonal(D, 0.0)
    return DistanceMatrix(D, float(eps), float(c), np.asarray(rows, dtype=np.int64))


def reachability_distances(reach: np.ndarray, c: float = DEFAULT_C) -> DistanceMatrix:
    """Noise-free matrix ``D_ij = c d`` iff a directed path ``i -> j`` exists (all variables intervened)."""
    reach = np.asarray(reach) != 0
    d = reach.shape[0]
    D = c * d * reach.astype(np.float64)
    np.fill_diagonal(D, 0.0)
    return DistanceMatrix(D, 0.0, float(c), np.arange(d))


def save_distance_matrix(dm: DistanceMatrix, path) -> None:
    """CSV of ``D`` plus a ``<name>.json`` sidecar with eps, c and the 1-based targets."""
    path = Path(path)
    np.savetxt(path, dm.D, delimiter=",", fmt="%.17g")
    sidecar = {"eps": dm.eps, "c": dm.c, "targets": [int(k) + 1 for k in dm.targets]}
    path.with_suffix(".json").write_text(json.dumps(sidecar, indent=2) + "\n")


def load_distance_matrix(path) -> DistanceMatrix:
    path = Path(path)
    D = np.loadtxt(path, delimiter=",", ndmin=2)
    side = json.loads(path.with_suffix(".json").read_text())
    return DistanceMatrix(D, side["eps"], side["c"], np.asarray(side["targets"], dtype=np.int64) - 1)
