# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled inner loops: 1-NN search, weighted Gini split search, and a
synchronous Bellman sweep over a deterministic tabular MDP.

Semantics are pinned by ``mdphom._fallback``; both must agree exactly on
indices and to rounding on floats.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport fabs, INFINITY

cnp.import_array()

ctypedef cnp.float64_t f64
ctypedef cnp.int64_t i64


def nearest(const f64[:, ::1] train, const f64[:, ::1] queries):
    """Index of the nearest training row per query; ties go to the lower index."""
    cdef Py_ssize_t n = train.shape[0], d = train.shape[1], m = queries.shape[0]
    cdef Py_ssize_t i, j, k
    cdef f64 best, dist, diff
    cdef i64 arg
    if n == 0:
        raise ValueError("empty index")
    out = np.empty(m, dtype=np.int64)
    cdef i64[::1] res = out
    with nogil:
        for j in range(m):
            best = INFINITY
            arg = 0
            for i in range(n):
                dist = 0.0
                for k in range(d):
                    diff = train[i, k] - queries[j, k]
                    dist = dist + diff * diff
                    if dist >= best:
                        break
                if dist < best:
                    best = dist
                    arg = i
            res[j] = arg
    return out


def best_split(const f64[:, ::1] X, const i64[::1] y, const f64[::1] w,
               const i64[::1] rows, Py_ssize_t n_classes):
    """Best axis-aligned threshold by weighted Gini of the two children.

    Returns ``(feature, threshold, child_impurity)`` or ``(-1, nan, inf)``
    when every feature is constant on ``rows``.
    """
    cdef Py_ssize_t n = rows.shape[0], d = X.shape[1]
    cdef Py_ssize_t f, p, c, r, nxt
    cdef f64 total_w = 0.0, wl, wr, sl, sr, imp
    cdef f64 best_imp = INFINITY, best_thr = np.nan
    cdef Py_ssize_t best_f = -1
    tot = np.zeros(n_classes, dtype=np.float64)
    left = np.zeros(n_classes, dtype=np.float64)
    cdef f64[::1] tot_v = tot
    cdef f64[::1] left_v = left
    col = np.empty(n, dtype=np.float64)
    cdef f64[::1] col_v = col
    cdef i64[::1] order_v

    for p in range(n):
        r = rows[p]
        tot_v[y[r]] += w[r]
        total_w += w[r]

    for f in range(d):
        for p in range(n):
            col_v[p] = X[rows[p], f]
        order_v = np.argsort(col, kind="stable").astype(np.int64)
        if col_v[order_v[0]] == col_v[order_v[n - 1]]:
            continue
        for c in range(n_classes):
            left_v[c] = 0.0
        wl = 0.0
        for p in range(n - 1):
            r = rows[order_v[p]]
            left_v[y[r]] += w[r]
            wl += w[r]
            nxt = order_v[p + 1]
            if col_v[order_v[p]] == col_v[nxt]:
                continue
            wr = total_w - wl
            sl = 0.0
            sr = 0.0
            for c in range(n_classes):
                sl += left_v[c] * left_v[c]
                sr += (tot_v[c] - left_v[c]) * (tot_v[c] - left_v[c])
            imp = (wl - sl / wl) + (wr - sr / wr)
            if imp < best_imp - 1e-12 * (1.0 + fabs(best_imp if best_imp < INFINITY else 0.0)):
                best_imp = imp
                best_f = f
                best_thr = 0.5 * (col_v[order_v[p]] + col_v[nxt])
    return best_f, best_thr, best_imp


def bellman_sweep(const f64[::1] reward, const i64[::1] succ, const i64[::1] ptr,
                  f64 gamma, const f64[::1] q, f64[::1] q_new):
    """One synchronous sweep ``q_new[a] = r[a] + gamma * max q[succ[a], .]``.

    Actions of state ``s`` occupy ``ptr[s]:ptr[s+1]``; states without
    actions have value 0. Returns the max absolute change.
    """
    cdef Py_ssize_t n_states = ptr.shape[0] - 1, n_act = reward.shape[0]
    cdef Py_ssize_t s, a
    cdef f64 v, delta = 0.0, diff
    values = np.zeros(n_states, dtype=np.float64)
    cdef f64[::1] vals = values
    with nogil:
        for s in range(n_states):
            if ptr[s + 1] > ptr[s]:
                v = q[ptr[s]]
                for a in range(ptr[s] + 1, ptr[s + 1]):
                    if q[a] > v:
                        v = q[a]
                vals[s] = v
        for a in range(n_act):
            q_new[a] = reward[a] + gamma * vals[succ[a]]
            diff = fabs(q_new[a] - q[a])
            if diff > delta:
                delta = diff
    return delta
