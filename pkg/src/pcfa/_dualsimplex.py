"""Warm-startable bounded dual simplex, compiled with numba.

Solves ``min c.x  s.t.  A x + s = b,  0 <= x <= u,  0 <= s <= us`` where
every variable is boxed.  Boxing makes any basis dual feasible after the
nonbasic variables are moved to the bound matching the sign of their reduced
cost, so a solve can start from whatever basis the previous solve ended in
as long as the constraint matrix is the same.  Only ``b``, ``c`` and ``u``
may change between warm solves.

The basis inverse is kept explicitly (dense, product-form updates) and
refactorized every ``REFACTOR_EVERY`` pivots; the constraint matrix is read
column-wise in CSC form.
"""
from __future__ import annotations

import numpy as np
from numba import njit

OPTIMAL = 0
INFEASIBLE = 1
ITERATION_LIMIT = 2
SINGULAR = 3

REFACTOR_EVERY = 256
PRIMAL_TOL = 1e-9
DUAL_TOL = 1e-9
PIVOT_TOL = 1e-9


@njit(cache=True)
def _refactor(indptr, indices, data, n, m, head, Binv):
    B = np.zeros((m, m))
    for k in range(m):
        j = head[k]
        if j < n:
            for p in range(indptr[j], indptr[j + 1]):
                B[indices[p], k] = data[p]
        else:
            B[j - n, k] = 1.0
    inv = np.linalg.inv(B)
    for i in range(m):
        for k in range(m):
            if not np.isfinite(inv[i, k]):
                return False
    Binv[:, :] = inv
    return True


@njit(cache=True)
def _recompute(indptr, indices, data, n, m, b, cost, ub, head, at_upper, Binv, xB, d, flip):
    """Fresh primal values and reduced costs; optionally flip nonbasics to
    the dual-feasible bound."""
    N = n + m
    # y = c_B^T Binv
    y = np.zeros(m)
    for k in range(m):
        cb = cost[head[k]]
        if cb != 0.0:
            for i in range(m):
                y[i] += cb * Binv[k, i]
    basic = np.zeros(N, dtype=np.bool_)
    for k in range(m):
        basic[head[k]] = True
    for j in range(N):
        if basic[j]:
            d[j] = 0.0
            continue
        if j < n:
            s = cost[j]
            for p in range(indptr[j], indptr[j + 1]):
                s -= y[indices[p]] * data[p]
        else:
            s = -y[j - n]
        d[j] = s
        if flip:
            if s < -DUAL_TOL:
                at_upper[j] = True
            elif s > DUAL_TOL:
                at_upper[j] = False
    r = b.copy()
    for j in range(N):
        if basic[j] or not at_upper[j]:
            continue
        v = ub[j]
        if j < n:
            for p in range(indptr[j], indptr[j + 1]):
                r[indices[p]] -= data[p] * v
        else:
            r[j - n] -= v
    for k in range(m):
        s = 0.0
        for i in range(m):
            s += Binv[k, i] * r[i]
        xB[k] = s
    return y


@njit(cache=True)
def dual_simplex(indptr, indices, data, n, m, b, c, ux, us, head, at_upper, Binv, pivots, max_iter):
    """Run the dual simplex in place; returns (status, iterations, x, y).

    ``head`` (length m), ``at_upper`` (length n+m), ``Binv`` (m x m) and
    ``pivots`` (pivots since the last refactorization, length 1) are the
    warm-start state and are updated in place.
    """
    N = n + m
    cost = np.zeros(N)
    ub = np.empty(N)
    for j in range(n):
        cost[j] = c[j]
        ub[j] = ux[j]
    for i in range(m):
        ub[n + i] = us[i]
    xB = np.zeros(m)
    d = np.zeros(N)
    pos = -np.ones(N, dtype=np.int64)
    for k in range(m):
        pos[head[k]] = k
    y = _recompute(indptr, indices, data, n, m, b, cost, ub, head, at_upper, Binv, xB, d, True)

    alpha = np.zeros(N)
    w = np.zeros(m)
    prow = np.zeros(m)
    it = 0
    status = OPTIMAL
    while True:
        # leaving row: largest bound violation, lowest index on ties
        r = -1
        worst = 0.0
        for k in range(m):
            v = xB[k]
            u = ub[head[k]]
            tol = PRIMAL_TOL * (1.0 + abs(u))
            if v < -tol:
                viol = -v
            elif v > u + tol:
                viol = v - u
            else:
                continue
            if viol > worst:
                worst = viol
                r = k
        if r < 0:
            break
        if it >= max_iter:
            status = ITERATION_LIMIT
            break
        to_upper = xB[r] > ub[head[r]]

        # pivot row alpha_j = (Binv[r] . a_j) for nonbasic j, dual ratio test
        q = -1
        best_ratio = np.inf
        best_abs = 0.0
        for j in range(N):
            if pos[j] >= 0:
                continue
            if j < n:
                s = 0.0
                for p in range(indptr[j], indptr[j + 1]):
                    s += Binv[r, indices[p]] * data[p]
            else:
                s = Binv[r, j - n]
            alpha[j] = s
            if ub[j] <= 0.0:
                continue
            if to_upper:
                ok = (not at_upper[j] and s > PIVOT_TOL) or (at_upper[j] and s < -PIVOT_TOL)
            else:
                ok = (not at_upper[j] and s < -PIVOT_TOL) or (at_upper[j] and s > PIVOT_TOL)
            if not ok:
                continue
            ratio = abs(d[j]) / abs(s)
            if ratio < best_ratio - 1e-12 or (ratio <= best_ratio + 1e-12 and abs(s) > best_abs):
                best_ratio = ratio
                best_abs = abs(s)
                q = j
        if q < 0:
            status = INFEASIBLE
            break

        # column w = Binv a_q
        for k in range(m):
            w[k] = 0.0
        if q < n:
            for p in range(indptr[q], indptr[q + 1]):
                i = indices[p]
                v = data[p]
                for k in range(m):
                    w[k] += Binv[k, i] * v
        else:
            for k in range(m):
                w[k] = Binv[k, q - n]

        # dual update
        theta_d = d[q] / alpha[q]
        for j in range(N):
            if pos[j] < 0:
                d[j] -= theta_d * alpha[j]
        leaving = head[r]
        d[leaving] = -theta_d
        d[q] = 0.0

        # primal update: leaving variable lands on its violated bound
        target = ub[leaving] if to_upper else 0.0
        delta = (xB[r] - target) / w[r]
        xq = ub[q] if at_upper[q] else 0.0
        for k in range(m):
            xB[k] -= delta * w[k]
        xB[r] = xq + delta

        # basis inverse update
        piv = w[r]
        for i in range(m):
            prow[i] = Binv[r, i] / piv
        for k in range(m):
            f = w[k]
            if k == r:
                Binv[k, :] = prow
            elif f != 0.0:
                row = Binv[k]
                for i in range(m):
                    row[i] -= f * prow[i]
        head[r] = q
        pos[q] = r
        pos[leaving] = -1
        at_upper[leaving] = to_upper
        at_upper[q] = False
        it += 1
        pivots[0] += 1
        if pivots[0] >= REFACTOR_EVERY:
            if not _refactor(indptr, indices, data, n, m, head, Binv):
                status = SINGULAR
                break
            pivots[0] = 0
            y = _recompute(indptr, indices, data, n, m, b, cost, ub, head, at_upper, Binv, xB, d, True)

    if status == OPTIMAL:
        y = _recompute(indptr, indices, data, n, m, b, cost, ub, head, at_upper, Binv, xB, d, False)
    x = np.zeros(n)
    for j in range(n):
        if pos[j] >= 0:
            x[j] = xB[pos[j]]
        elif at_upper[j]:
            x[j] = ub[j]
    return status, it, x, y


@njit(cache=True)
def slack_bounds(indptr, indices, data, n, m, b, ux, equality):
    """Largest value each row slack can take over the variable box."""
    us = b.copy()
    for j in range(n):
        for p in range(indptr[j], indptr[j + 1]):
            if data[p] < 0.0:
                us[indices[p]] -= data[p] * ux[j]
    for i in range(m):
        if equality[i]:
            us[i] = 0.0
        elif us[i] < 0.0:
            us[i] = 0.0
    return us


@njit(cache=True)
def solve_from_basis(indptr, indices, data, n, m, B, C, UX, equality, head0, at_upper0, Binv0, pivots0, max_iter):
    """Solve each LP ``(B[v], C[v], UX[v])`` starting from one shared basis.

    The shared state is copied, never modified.  Returns per-LP statuses,
    iteration counts and points.
    """
    V = B.shape[0]
    X = np.zeros((V, n))
    status = np.zeros(V, dtype=np.int64)
    iters = np.zeros(V, dtype=np.int64)
    head = np.empty_like(head0)
    at_upper = np.empty_like(at_upper0)
    Binv = np.empty_like(Binv0)
    piv = np.zeros(1, dtype=np.int64)
    for v in range(V):
        head[:] = head0
        at_upper[:] = at_upper0
        Binv[:, :] = Binv0
        piv[0] = pivots0
        us = slack_bounds(indptr, indices, data, n, m, B[v], UX[v], equality)
        st, it, x, y = dual_simplex(indptr, indices, data, n, m, B[v], C[v], UX[v], us,
                                    head, at_upper, Binv, piv, max_iter)
        status[v] = st
        iters[v] = it
        X[v] = x
    return status, iters, X
