"""Pure numpy versions of the compiled kernels in ``_kernels.pyx``."""
import numpy as np


def nearest(train: np.ndarray, queries: np.ndarray) -> np.ndarray:
    if len(train) == 0:
        raise ValueError("empty index")
    out = np.empty(len(queries), dtype=np.int64)
    for j, x in enumerate(queries):
        d = ((train - x) ** 2).sum(axis=1)
        out[j] = int(np.argmin(d))  # argmin returns the first minimum
    return out


def best_split(X, y, w, rows, n_classes):
    rows = np.asarray(rows, dtype=np.int64)
    yr, wr = y[rows], w[rows]
    tot = np.bincount(yr, weights=wr, minlength=n_classes)
    total_w = wr.sum()
    best_f, best_thr, best_imp = -1, float("nan"), float("inf")
    for f in range(X.shape[1]):
        col = X[rows, f]
        order = np.argsort(col, kind="stable")
        cs = col[order]
        if cs[0] == cs[-1]:
            continue
        onehot = np.zeros((len(rows), n_classes))
        onehot[np.arange(len(rows)), yr[order]] = wr[order]
        left = np.cumsum(onehot, axis=0)[:-1]
        wl = np.cumsum(wr[order])[:-1]
        right = tot - left
        wrr = total_w - wl
        imp = (wl - (left * left).sum(axis=1) / wl) + (wrr - (right * right).sum(axis=1) / wrr)
        for p in np.flatnonzero(cs[:-1] != cs[1:]):
            scale = 1.0 + (abs(best_imp) if best_imp < float("inf") else 0.0)
            if imp[p] < best_imp - 1e-12 * scale:
                best_imp = float(imp[p])
                best_f = f
                best_thr = 0.5 * (cs[p] + cs[p + 1])
    return best_f, best_thr, best_imp


def bellman_sweep(reward, succ, ptr, gamma, q, q_new):
    n_states = len(ptr) - 1
    values = np.zeros(n_states)
    counts = np.diff(ptr)
    has = counts > 0
    if len(q):
        owner = np.repeat(np.arange(n_states), counts)
        best = np.full(n_states, -np.inf)
        np.maximum.at(best, owner, q)
        values[has] = best[has]
    q_new[:] = reward + gamma * values[succ]
    return float(np.abs(q_new - q).max()) if len(q) else 0.0
