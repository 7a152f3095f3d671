"""Compiled inner loops for the log-domain Sinkhorn operator and its adjoint.

The iterate after ``k`` row/column sweeps is kept in dual form,
``X_k = A + u_k 1^T + 1 v_k^T``, so the reverse pass only has to store two
length-``d`` vectors per sweep and recomputes the softmax weights on the fly.
"""

import numpy as np
from numba import njit

# exp(-50) ~ 2e-22: terms below this are invisible next to the unit-mass row/column sums.
CUTOFF = -50.0


@njit(cache=True)
def sinkhorn_duals(A, n_iter, u_hist, v_hist):
    """Run ``n_iter`` row-then-column log-normalisations of ``A``.

    Fills ``u_hist[k]``/``v_hist[k]`` with the duals after sweep ``k`` and
    returns the first sweep index from which the duals are bitwise stationary
    (``n_iter`` if that never happens).
    """
    d = A.shape[0]
    u = np.zeros(d)
    v = np.zeros(d)
    cmax = np.empty(d)
    csum = np.empty(d)
    for k in range(n_iter):
        for i in range(d):
            m = A[i, 0] + v[0]
            for j in range(1, d):
                x = A[i, j] + v[j]
                if x > m:
                    m = x
            s = 0.0
            for j in range(d):
                x = A[i, j] + v[j] - m
                if x > CUTOFF:
                    s += np.exp(x)
            u[i] = -(m + np.log(s))

        for j in range(d):
            cmax[j] = A[0, j] + u[0]
            csum[j] = 0.0
        for i in range(1, d):
            for j in range(d):
                x = A[i, j] + u[i]
                if x > cmax[j]:
                    cmax[j] = x
        for i in range(d):
            for j in range(d):
                x = A[i, j] + u[i] - cmax[j]
                if x > CUTOFF:
                    csum[j] += np.exp(x)
        stationary = k > 0
        for j in range(d):
            vj = -(cmax[j] + np.log(csum[j]))
            if vj != v[j]:
                stationary = False
            v[j] = vj

        u_hist[k, :] = u
        v_hist[k, :] = v
        if stationary:
            # v_k == v_{k-1} makes every later sweep reproduce (u_k, v_k) exactly.
            for kk in range(k + 1, n_iter):
                u_hist[kk, :] = u
                v_hist[kk, :] = v
            return k
    return n_iter


@njit(cache=True)
def sinkhorn_vjp(A, u_hist, v_hist, k_stat, k_stop, G):
    """Reverse pass of :func:`sinkhorn_duals` for ``S = exp(X_T)``.

    ``G`` is dL/dS; returns dL/dA.  Sweeps with index below ``k_stop`` are
    treated as constants (truncated unrolling).
    """
    d = A.shape[0]
    T = u_hist.shape[0]
    gA = np.empty((d, d))
    gu = np.zeros(d)
    gv = np.zeros(d)
    uT = u_hist[T - 1]
    vT = v_hist[T - 1]

    S = np.zeros((d, d))
    for i in range(d):
        for j in range(d):
            x = A[i, j] + uT[i] + vT[j]
            if x > CUTOFF:
                S[i, j] = np.exp(x)
            g = G[i, j] * S[i, j]
            gA[i, j] = g
            gu[i] += g
            gv[j] += g

    k = T - 1
    lo = max(k_stat, k_stop)
    if lo < T:
        # Every sweep in [lo, T) sees the same converged matrix S in both half steps.
        sum_gu = np.zeros(d)
        sum_gv = np.zeros(d)
        for _ in range(T - lo):
            for j in range(d):
                sum_gv[j] += gv[j]
            for i in range(d):
                acc = gu[i]
                for j in range(d):
                    acc -= S[i, j] * gv[j]
                gu[i] = acc
                sum_gu[i] += acc
            for j in range(d):
                gv[j] = 0.0
            for i in range(d):
                gi = gu[i]
                for j in range(d):
                    gv[j] -= S[i, j] * gi
                gu[i] = 0.0
        for i in range(d):
            for j in range(d):
                gA[i, j] -= S[i, j] * (sum_gv[j] + sum_gu[i])
        k = lo - 1

    zeros = np.zeros(d)
    gv_next = np.empty(d)
    while k >= k_stop:
        u = u_hist[k]
        v = v_hist[k]
        # column half step: v_k = -lse_i(A + u_k)
        for i in range(d):
            for j in range(d):
                x = A[i, j] + u[i] + v[j]
                if x > CUTOFF:
                    c = np.exp(x) * gv[j]
                    gA[i, j] -= c
                    gu[i] -= c
        # row half step: u_k = -lse_j(A + v_{k-1})
        vprev = v_hist[k - 1] if k > 0 else zeros
        for j in range(d):
            gv_next[j] = 0.0
        for i in range(d):
            gi = gu[i]
            if gi == 0.0:
                continue
            for j in range(d):
                x = A[i, j] + u[i] + vprev[j]
                if x > CUTOFF:
                    r = np.exp(x) * gi
                    gA[i, j] -= r
                    gv_next[j] -= r
        for j in range(d):
            gv[j] = gv_next[j]
        for i in range(d):
            gu[i] = 0.0
        k -= 1
    return gA


# ---------------------------------------------------------------------------
# Active-set variant.  Each sweep only visits entries within ``margin`` nats of
# their row or column maximum at the last rebuild.  Before a half step is
# committed, the largest skipped entry of every row (column) is bounded using
# how far the opposite dual has moved; if a skipped entry could clear the
# cutoff the caller rebuilds.  When no rebuild is needed the arithmetic (max,
# summation order) is exactly that of the dense kernel.


@njit(cache=True)
def build_active(A, u, v, margin):
    d = A.shape[0]
    rmax = np.full(d, -np.inf)
    cmax = np.full(d, -np.inf)
    for i in range(d):
        for j in range(d):
            x = A[i, j] + v[j]
            if x > rmax[i]:
                rmax[i] = x
            y = A[i, j] + u[i]
            if y > cmax[j]:
                cmax[j] = y
    lim = CUTOFF - margin
    indptr = np.zeros(d + 1, dtype=np.int64)
    for i in range(d):
        c = 0
        for j in range(d):
            if A[i, j] + v[j] - rmax[i] > lim or A[i, j] + u[i] - cmax[j] > lim:
                c += 1
        indptr[i + 1] = indptr[i] + c
    indices = np.empty(indptr[d], dtype=np.int64)
    row_bound = np.full(d, -np.inf)
    col_bound = np.full(d, -np.inf)
    for i in range(d):
        pos = indptr[i]
        for j in range(d):
            x = A[i, j] + v[j]
            y = A[i, j] + u[i]
            if x - rmax[i] > lim or y - cmax[j] > lim:
                indices[pos] = j
                pos += 1
            else:
                if x > row_bound[i]:
                    row_bound[i] = x
                if y > col_bound[j]:
                    col_bound[j] = y
    return indptr, indices, row_bound, col_bound


@njit(cache=True)
def sweep_active(A, indptr, indices, row_bound, col_bound, u_ref, v_ref,
                 u, v, u_hist, v_hist, row_ep, col_ep, epoch, k, half, n_iter):
    """Advance the sweeps from ``(k, half)``.

    Returns ``(k, half, status)`` with status 0 = all sweeps done,
    1 = active set too stale (rebuild and resume), 2 = stationary at ``k``.
    """
    d = A.shape[0]
    u_new = np.empty(d)
    cmax = np.empty(d)
    csum = np.empty(d)
    while k < n_iter:
        if half == 0:
            dv = 0.0
            for j in range(d):
                if v[j] - v_ref[j] > dv:
                    dv = v[j] - v_ref[j]
            for i in range(d):
                m = -np.inf
                for p in range(indptr[i], indptr[i + 1]):
                    x = A[i, indices[p]] + v[indices[p]]
                    if x > m:
                        m = x
                if row_bound[i] + dv > m + CUTOFF:
                    return k, 0, 1
                s = 0.0
                for p in range(indptr[i], indptr[i + 1]):
                    x = A[i, indices[p]] + v[indices[p]] - m
                    if x > CUTOFF:
                        s += np.exp(x)
                u_new[i] = -(m + np.log(s))
            u[:] = u_new
            u_hist[k, :] = u
            row_ep[k] = epoch
            half = 1
        else:
            du = 0.0
            for i in range(d):
                if u[i] - u_ref[i] > du:
                    du = u[i] - u_ref[i]
            for j in range(d):
                cmax[j] = -np.inf
                csum[j] = 0.0
            for i in range(d):
                for p in range(indptr[i], indptr[i + 1]):
                    j = indices[p]
                    x = A[i, j] + u[i]
                    if x > cmax[j]:
                        cmax[j] = x
            for j in range(d):
                if col_bound[j] + du > cmax[j] + CUTOFF:
                    return k, 1, 1
            for i in range(d):
                for p in range(indptr[i], indptr[i + 1]):
                    j = indices[p]
                    x = A[i, j] + u[i] - cmax[j]
                    if x > CUTOFF:
                        csum[j] += np.exp(x)
            stationary = k > 0
            for j in range(d):
                vj = -(cmax[j] + np.log(csum[j]))
                if vj != v[j]:
                    stationary = False
                v[j] = vj
            v_hist[k, :] = v
            col_ep[k] = epoch
            half = 0
            if stationary:
                for kk in range(k + 1, n_iter):
                    u_hist[kk, :] = u
                    v_hist[kk, :] = v
                    row_ep[kk] = epoch
                    col_ep[kk] = epoch
                return k, 0, 2
            k += 1
    return k, 0, 0


@njit(cache=True)
def vjp_output_active(A, indptr, indices, u, v, G, gA, gu, gv):
    """Seed the reverse pass with dL/dS on the support of ``S = exp(A + u + v)``."""
    d = A.shape[0]
    for i in range(d):
        for p in range(indptr[i], indptr[i + 1]):
            j = indices[p]
            x = A[i, j] + u[i] + v[j]
            if x > CUTOFF:
                g = G[i, j] * np.exp(x)
                gA[i, j] += g
                gu[i] += g
                gv[j] += g


@njit(cache=True)
def vjp_stationary_active(A, indptr, indices, u, v, gA, gu, gv, n_rep):
    """Reverse ``n_rep`` identical sweeps at the converged matrix in one go."""
    d = A.shape[0]
    nnz = indptr[d]
    s_val = np.zeros(nnz)
    for i in range(d):
        for p in range(indptr[i], indptr[i + 1]):
            x = A[i, indices[p]] + u[i] + v[indices[p]]
            if x > CUTOFF:
                s_val[p] = np.exp(x)
    sum_gu = np.zeros(d)
    sum_gv = np.zeros(d)
    for _ in range(n_rep):
        for j in range(d):
            sum_gv[j] += gv[j]
        for i in range(d):
            acc = gu[i]
            for p in range(indptr[i], indptr[i + 1]):
                acc -= s_val[p] * gv[indices[p]]
            gu[i] = acc
            sum_gu[i] += acc
        for j in range(d):
            gv[j] = 0.0
        for i in range(d):
            gi = gu[i]
            for p in range(indptr[i], indptr[i + 1]):
                gv[indices[p]] -= s_val[p] * gi
            gu[i] = 0.0
    for i in range(d):
        for p in range(indptr[i], indptr[i + 1]):
            j = indices[p]
            gA[i, j] -= s_val[p] * (sum_gv[j] + sum_gu[i])


@njit(cache=True)
def vjp_sweep_active(A, c_indptr, c_indices, r_indptr, r_indices, u, v, vprev, gA, gu, gv):
    """Reverse one row-then-column sweep (column half first)."""
    d = A.shape[0]
    for i in range(d):
        for p in range(c_indptr[i], c_indptr[i + 1]):
            j = c_indices[p]
            x = A[i, j] + u[i] + v[j]
            if x > CUTOFF:
                c = np.exp(x) * gv[j]
                gA[i, j] -= c
                gu[i] -= c
    for j in range(d):
        gv[j] = 0.0
    for i in range(d):
        gi = gu[i]
        if gi == 0.0:
            continue
        for p in range(r_indptr[i], r_indptr[i + 1]):
            j = r_indices[p]
            x = A[i, j] + u[i] + vprev[j]
            if x > CUTOFF:
                r = np.exp(x) * gi
                gA[i, j] -= r
                gv[j] -= r
        gu[i] = 0.0
