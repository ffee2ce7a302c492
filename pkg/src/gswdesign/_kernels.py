"""Fused walk kernels: one numba implementation, one vectorized numpy twin.

Both consume the slot layout documented in ``_rng`` (pivot slot 2t, step
slot 2t + 1, a persisted pivot leaves its slot unread) and apply identical
freeze and cache-refresh rules, so for a given draw block they trace the
same trajectory. The active backend is chosen in ``backend``.

Kernel outputs: the finished sign vector, the number of steps taken, and
the pivot used at each step (-1 for steps that never ran).
"""

from __future__ import annotations

import numpy as np

from .linalg import DOWNDATE_DENOM_MIN, RECOMPUTE_INTERVAL


def gsw_walk_numpy(Y, pivot_draws, step_draws, freeze_tol):
    n, d = Y.shape
    z = np.zeros(n)
    active = np.arange(n, dtype=np.int64)
    is_active = np.ones(n, dtype=bool)
    D = np.zeros((0, 0))
    if d > 0:
        D = np.linalg.inv(np.eye(d) + Y.T @ Y)
    prev = -1
    downdates = 0
    pivots = np.full(n, -1, dtype=np.int64)
    steps = 0
    for t in range(n):
        m = active.shape[0]
        if m == 0:
            break
        if prev >= 0 and is_active[prev]:
            p = prev
        else:
            j = min(int(pivot_draws[t] * m), m - 1)
            p = int(active[j])
        pivots[t] = p

        if d > 0:
            y_p = Y[p]
            w = D @ y_p
            denom = 1.0 - float(y_p @ w)
            u = -(Y[active] @ w) / denom
        else:
            u = np.zeros(m)
        pos_p = int(np.searchsorted(active, p))
        u[pos_p] = 1.0

        z_act = z[active]
        nz = u != 0.0
        up = np.where(u > 0.0, (1.0 - z_act) / np.where(nz, u, 1.0), (-1.0 - z_act) / np.where(nz, u, 1.0))
        dn = np.where(u > 0.0, (z_act + 1.0) / np.where(nz, u, 1.0), (z_act - 1.0) / np.where(nz, u, 1.0))
        d_plus = float(up[nz].min())
        d_minus = float(dn[nz].min())

        delta = d_plus if step_draws[t] <= d_minus / (d_plus + d_minus) else -d_minus
        z[active] = z_act + delta * u
        steps += 1

        frozen = np.abs(z[active]) >= 1.0 - freeze_tol
        if frozen.any():
            hit = active[frozen]
            z[hit] = np.where(z[hit] > 0.0, 1.0, -1.0)
            is_active[hit] = False
            need_full = False
            if d > 0:
                for i in hit:
                    w2 = D @ Y[i]
                    den2 = 1.0 - float(Y[i] @ w2)
                    downdates += 1
                    if den2 < DOWNDATE_DENOM_MIN or downdates >= RECOMPUTE_INTERVAL:
                        need_full = True
                        break
                    D = D + np.outer(w2, w2) / den2
            active = active[~frozen]
            if need_full:
                rows = Y[active]
                D = np.linalg.inv(np.eye(d) + rows.T @ rows)
                downdates = 0
        prev = p
    return z, steps, pivots


def _gsw_walk_loops(Y, pivot_draws, step_draws, freeze_tol):
    # Loop-style twin of gsw_walk_numpy; compiled by numba in backend.py.
    n, d = Y.shape
    z = np.zeros(n)
    active = np.empty(n, dtype=np.int64)
    for i in range(n):
        active[i] = i
    m = n
    is_active = np.ones(n, dtype=np.bool_)
    D = np.zeros((d, d))
    if d > 0:
        M = np.eye(d)
        for i in range(n):
            for a in range(d):
                for b in range(d):
                    M[a, b] += Y[i, a] * Y[i, b]
        D = np.linalg.inv(M)
    prev = -1
    downdates = 0
    pivots = np.full(n, -1, dtype=np.int64)
    steps = 0
    u = np.zeros(n)
    w = np.zeros(d)
    for t in range(n):
        if m == 0:
            break
        if prev >= 0 and is_active[prev]:
            p = prev
        else:
            j = int(pivot_draws[t] * m)
            if j >= m:
                j = m - 1
            p = int(active[j])
        pivots[t] = p

        denom = 1.0
        if d > 0:
            for a in range(d):
                s = 0.0
                for b in range(d):
                    s += D[a, b] * Y[p, b]
                w[a] = s
            ypw = 0.0
            for a in range(d):
                ypw += Y[p, a] * w[a]
            denom = 1.0 - ypw
        for idx in range(m):
            i = active[idx]
            if i == p:
                u[idx] = 1.0
            elif d > 0:
                s = 0.0
                for a in range(d):
                    s += Y[i, a] * w[a]
                u[idx] = -s / denom
            else:
                u[idx] = 0.0

        d_plus = np.inf
        d_minus = np.inf
        for idx in range(m):
            ui = u[idx]
            if ui == 0.0:
                continue
            zi = z[active[idx]]
            if ui > 0.0:
                a_up = (1.0 - zi) / ui
                a_dn = (zi + 1.0) / ui
            else:
                a_up = (-1.0 - zi) / ui
                a_dn = (zi - 1.0) / ui
            if a_up < d_plus:
                d_plus = a_up
            if a_dn < d_minus:
                d_minus = a_dn

        if step_draws[t] <= d_minus / (d_plus + d_minus):
            delta = d_plus
        else:
            delta = -d_minus
        for idx in range(m):
            z[active[idx]] += delta * u[idx]
        steps += 1

        new_m = 0
        need_full = False
        for idx in range(m):
            i = active[idx]
            if abs(z[i]) >= 1.0 - freeze_tol:
                z[i] = 1.0 if z[i] > 0.0 else -1.0
                is_active[i] = False
                if d > 0 and not need_full:
                    for a in range(d):
                        s = 0.0
                        for b in range(d):
                            s += D[a, b] * Y[i, b]
                        w[a] = s
                    den2 = 0.0
                    for a in range(d):
                        den2 += Y[i, a] * w[a]
                    den2 = 1.0 - den2
                    downdates += 1
                    if den2 < DOWNDATE_DENOM_MIN or downdates >= RECOMPUTE_INTERVAL:
                        need_full = True
                    else:
                        for a in range(d):
                            for b in range(d):
                                D[a, b] += w[a] * w[b] / den2
            else:
                active[new_m] = i
                new_m += 1
        m = new_m
        if need_full and d > 0:
            M = np.eye(d)
            for idx in range(m):
                i = active[idx]
                for a in range(d):
                    for b in range(d):
                        M[a, b] += Y[i, a] * Y[i, b]
            D = np.linalg.inv(M)
            downdates = 0
        prev = p
    return z, steps, pivots
