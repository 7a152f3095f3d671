"""Differentiable permutation machinery.

Log-domain Sinkhorn operator with an exact reverse pass through the unrolled
iterations, Hungarian rounding, and the order mask ``P K P^T`` used both by
the DiffIntersort score and by the masked discovery model.

Gradients are hand-written vector-Jacobian products; every differentiable
object exposes ``backward``/``vjp`` taking the upstream gradient.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.optimize import linear_sum_assignment

from . import _kernels

MODES = ("straight-through", "soft")

# below this size the dense kernels beat the bookkeeping of the active-set ones
_DENSE_MAX_D = 32
_ACTIVE_MARGIN = 25.0


@dataclass(frozen=True)
class SinkhornConfig:
    """Temperature ``t`` and sweep count ``n_iter`` of the Sinkhorn operator.

    ``grad_iter`` truncates the reverse pass to the last ``grad_iter`` sweeps
    (the forward pass always runs all ``n_iter``). ``None`` unrolls everything.
    """

    t: float = 0.05
    n_iter: int = 500
    grad_iter: int | None = None

    def __post_init__(self):
        if not self.t > 0:
            raise ValueError(f"temperature must be positive, got {self.t}")
        if self.n_iter < 1:
            raise ValueError(f"n_iter must be >= 1, got {self.n_iter}")
        if self.grad_iter is not None and self.grad_iter < 1:
            raise ValueError(f"grad_iter must be >= 1 or None, got {self.grad_iter}")


@dataclass
class SinkhornResult:
    """Forward state of one Sinkhorn evaluation, kept for the reverse pass."""

    log_soft: np.ndarray
    cfg: SinkhornConfig
    _A: np.ndarray = field(repr=False)
    _u_hist: np.ndarray = field(repr=False)
    _v_hist: np.ndarray = field(repr=False)
    k_stat: int
    _active: tuple | None = field(default=None, repr=False)

    @property
    def soft(self) -> np.ndarray:
        return np.exp(self.log_soft)

    @property
    def converged_at(self) -> int | None:
        """Sweep index from which the iterate stopped changing, if it did."""
        return None if self.k_stat >= self.cfg.n_iter else self.k_stat

    def vjp(self, grad_soft: np.ndarray) -> np.ndarray:
        """Pull dL/d(soft) back to dL/dM for the input ``M`` (before ``/t``)."""
        G = np.ascontiguousarray(grad_soft, dtype=np.float64)
        T = self.cfg.n_iter
        k_stop = 0 if self.cfg.grad_iter is None else max(0, T - self.cfg.grad_iter)
        if self._active is None:
            gA = _kernels.sinkhorn_vjp(self._A, self._u_hist, self._v_hist, self.k_stat, k_stop, G)
        else:
            gA = _vjp_active(self, G, k_stop)
        return gA / self.cfg.t


def _forward_active(A, n_iter):
    d = A.shape[0]
    u = np.zeros(d)
    v = np.zeros(d)
    u_hist = np.empty((n_iter, d))
    v_hist = np.empty((n_iter, d))
    row_ep = np.zeros(n_iter, dtype=np.int64)
    col_ep = np.zeros(n_iter, dtype=np.int64)
    epochs = []
    k, half, k_stat = 0, 0, n_iter
    while True:
        indptr, indices, row_bound, col_bound = _kernels.build_active(A, u, v, _ACTIVE_MARGIN)
        epochs.append((indptr, indices))
        k, half, status = _kernels.sweep_active(
            A, indptr, indices, row_bound, col_bound, u.copy(), v.copy(),
            u, v, u_hist, v_hist, row_ep, col_ep, len(epochs) - 1, k, half, n_iter,
        )
        if status == 0:
            break
        if status == 2:
            k_stat = k
            break
    return u_hist, v_hist, k_stat, (epochs, row_ep, col_ep)


def _vjp_active(res: SinkhornResult, G, k_stop):
    epochs, row_ep, col_ep = res._active
    A, u_hist, v_hist = res._A, res._u_hist, res._v_hist
    T = u_hist.shape[0]
    d = A.shape[0]
    gA = np.zeros((d, d))
    gu = np.zeros(d)
    gv = np.zeros(d)
    last = epochs[col_ep[T - 1]]
    _kernels.vjp_output_active(A, last[0], last[1], u_hist[T - 1], v_hist[T - 1], G, gA, gu, gv)
    k = T - 1
    lo = max(res.k_stat, k_stop)
    if lo < T:
        _kernels.vjp_stationary_active(A, last[0], last[1], u_hist[T - 1], v_hist[T - 1], gA, gu, gv, T - lo)
        k = lo - 1
    zeros = np.zeros(d)
    while k >= k_stop:
        c_ptr, c_idx = epochs[col_ep[k]]
        r_ptr, r_idx = epochs[row_ep[k]]
        vprev = v_hist[k - 1] if k > 0 else zeros
        _kernels.vjp_sweep_active(A, c_ptr, c_idx, r_ptr, r_idx, u_hist[k], v_hist[k], vprev, gA, gu, gv)
        k -= 1
    return gA


def sinkhorn_forward(M: np.ndarray, cfg: SinkhornConfig = SinkhornConfig(), *, dense: bool | None = None) -> SinkhornResult:
    """Run the Sinkhorn operator on ``M / t`` and keep the state needed by :meth:`SinkhornResult.vjp`."""
    M = np.asarray(M, dtype=np.float64)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {M.shape}")
    if not np.all(np.isfinite(M)):
        raise ValueError("Sinkhorn input contains non-finite entries")
    A = np.ascontiguousarray(M / cfg.t)
    d = A.shape[0]
    if dense is None:
        dense = d <= _DENSE_MAX_D
    if dense:
        u_hist = np.empty((cfg.n_iter, d))
        v_hist = np.empty((cfg.n_iter, d))
        k_stat = _kernels.sinkhorn_duals(A, cfg.n_iter, u_hist, v_hist)
        active = None
    else:
        u_hist, v_hist, k_stat, active = _forward_active(A, cfg.n_iter)
    log_soft = A + u_hist[-1][:, None] + v_hist[-1][None, :]
    return SinkhornResult(log_soft, cfg, A, u_hist, v_hist, k_stat, active)


def sinkhorn_operator(M: np.ndarray, cfg: SinkhornConfig = SinkhornConfig()) -> np.ndarray:
    """Doubly-stochastic relaxation ``S(M/t)`` after ``cfg.n_iter`` row/column sweeps."""
    return sinkhorn_forward(M, cfg).soft


def hungarian(M: np.ndarray) -> np.ndarray:
    """Permutation matrix maximising ``<sigma, M>_F``."""
    M = np.asarray(M, dtype=np.float64)
    if not np.all(np.isfinite(M)):
        raise ValueError("assignment input contains non-finite entries")
    rows, cols = linear_sum_assignment(M, maximize=True)
    P = np.zeros(M.shape, dtype=np.float64)
    P[rows, cols] = 1.0
    return P


def order_template(d: int) -> np.ndarray:
    """Strictly lower-triangular ones: slot ``k`` precedes slot ``l`` iff ``k > l``.

    Slots are the columns of ``p o^T``, so the largest potential lands in the
    last slot and comes first in the order.
    """
    return np.tril(np.ones((d, d)), k=-1)


def sort_permutation(p: np.ndarray) -> np.ndarray:
    """Permutation matrix sending the ``k``-th smallest entry of ``p`` to slot ``k``.

    This is the exact maximiser of ``<sigma, p o^T>`` (rearrangement
    inequality), and row/column rescaling by Sinkhorn does not change it.
    """
    d = p.shape[0]
    P = np.zeros((d, d))
    P[np.argsort(p, kind="stable"), np.arange(d)] = 1.0
    return P


def _check_distinct(p):
    s = np.sort(p)
    if np.any(s[1:] == s[:-1]):
        raise ValueError("potential has tied entries; the induced order is undefined")


@dataclass
class OrderMask:
    """Edge mask ``P K P^T`` induced by a potential, with its reverse pass.

    In straight-through mode ``mask`` is binary (``P`` is the Hungarian
    rounding) and the reverse pass treats it as the relaxed mask
    ``S K S^T`` built from the Sinkhorn output ``S``, so ``dL/dmask`` reaches
    ``S`` unchanged. In soft mode the forward value is ``S K S^T`` itself.
    """

    mask: np.ndarray
    hard: np.ndarray
    soft: np.ndarray
    mode: str
    sinkhorn: SinkhornResult = field(repr=False)

    def backward(self, grad_mask: np.ndarray) -> np.ndarray:
        """dL/dp given dL/dmask."""
        G = np.asarray(grad_mask, dtype=np.float64)
        P = self.soft
        K = order_template(P.shape[0])
        grad_P = G @ P @ K.T + G.T @ P @ K
        grad_M = self.sinkhorn.vjp(grad_P)
        return grad_M @ np.arange(1, P.shape[0] + 1, dtype=np.float64)


def order_mask(p: np.ndarray, cfg: SinkhornConfig = SinkhornConfig(), mode: str = "straight-through") -> OrderMask:
    p = np.asarray(p, dtype=np.float64)
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
    _check_distinct(p)
    d = p.shape[0]
    o = np.arange(1, d + 1, dtype=np.float64)
    res = sinkhorn_forward(np.outer(p, o), cfg)
    # Row/column log-scalings leave the assignment argmax unchanged, and the log
    # iterate stays finite where exp(.) of an unconverged iterate would not.
    hard = hungarian(res.log_soft)
    if np.any(np.diff(p @ hard) <= 0):
        # gaps below float64 resolution of the iterate made the assignment a tie;
        # use the exact solution the rounding is meant to recover
        hard = sort_permutation(p)
    soft = res.soft
    K = order_template(d)
    P = hard if mode == "straight-through" else soft
    return OrderMask(P @ K @ P.T, hard, soft, mode, res)


def hard_mask_from_potential(p: np.ndarray, cfg: SinkhornConfig = SinkhornConfig()) -> tuple[np.ndarray, np.ndarray]:
    """Binary mask with ``mask[i, j] = 1`` iff ``p_i > p_j``, and the soft permutation behind it."""
    om = order_mask(p, cfg, "straight-through")
    return om.mask, om.soft


def grad_check(fun: Callable[[np.ndarray], tuple[float, np.ndarray]], x: np.ndarray, h: float = 1e-6) -> float:
    """Max relative error between ``fun``'s gradient and central differences.

    ``fun`` returns ``(value, grad)``. Coordinates where both gradients are
    below 1e-8 in magnitude are compared in absolute terms.
    """
    if not 1e-7 <= h <= 1e-3:
        raise ValueError(f"step {h} outside [1e-7, 1e-3]")
    x = np.array(x, dtype=np.float64)
    _, g = fun(x)
    g = np.asarray(g, dtype=np.float64)
    worst = 0.0
    for idx in np.ndindex(*x.shape):
        xp = x.copy()
        xm = x.copy()
        xp[idx] += h
        xm[idx] -= h
        fd = (fun(xp)[0] - fun(xm)[0]) / (2 * h)
        scale = max(abs(fd), abs(g[idx]))
        err = abs(fd - g[idx]) if scale < 1e-8 else abs(fd - g[idx]) / scale
        worst = max(worst, err)
    return worst
