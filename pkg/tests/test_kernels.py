import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mdphom import kernels

BACKENDS = kernels.available()
py = kernels.load("python")


def test_python_backend_always_available():
    assert "python" in BACKENDS


def test_env_var_forces_pure_python():
    code = "from mdphom import kernels; print(kernels.BACKEND)"
    out = subprocess.run([sys.executable, "-c", code], env={**os.environ, "MDPHOM_PURE": "1"},
                         capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "python"


def test_unknown_backend():
    with pytest.raises(ValueError):
        kernels.load("fortran")


@pytest.mark.parametrize("name", BACKENDS)
def test_nearest_first_index_on_ties(name):
    k = kernels.load(name)
    train = np.array([[0.0], [2.0], [0.0]])
    assert k.nearest(train, np.array([[1.0], [0.1], [5.0]])).tolist() == [0, 0, 1]


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 40), st.integers(1, 6))
def test_nearest_parity(seed, n, d):
    rng = np.random.default_rng(seed)
    train = rng.integers(0, 3, size=(n, d)).astype(float)
    queries = rng.integers(0, 3, size=(10, d)).astype(float)
    ref = py.nearest(train, queries)
    for name in BACKENDS:
        assert kernels.load(name).nearest(train, queries).tolist() == ref.tolist()


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10_000), st.integers(2, 40), st.integers(1, 5), st.integers(2, 4))
def test_best_split_parity(seed, n, d, n_classes):
    rng = np.random.default_rng(seed)
    X = np.ascontiguousarray(rng.integers(0, 3, size=(n, d)).astype(float))
    y = rng.integers(0, n_classes, size=n).astype(np.int64)
    w = rng.integers(1, 4, size=n).astype(float)
    rows = np.sort(rng.choice(n, size=int(rng.integers(2, n + 1)), replace=False)).astype(np.int64)
    f, thr, imp = py.best_split(X, y, w, rows, n_classes)
    for name in BACKENDS:
        f2, thr2, imp2 = kernels.load(name).best_split(X, y, w, rows, n_classes)
        assert f2 == f
        if f >= 0:
            assert thr2 == thr
            assert imp2 == pytest.approx(imp, rel=1e-12, abs=1e-12)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10_000))
def test_bellman_sweep_parity(seed):
    rng = np.random.default_rng(seed)
    n_states = int(rng.integers(1, 8))
    counts = rng.integers(0, 4, size=n_states)
    ptr = np.concatenate([[0], np.cumsum(counts)]).astype(np.int64)
    cells = int(ptr[-1])
    reward = rng.normal(size=cells)
    succ = rng.integers(0, n_states, size=cells).astype(np.int64)
    q = rng.normal(size=cells)
    expected = np.empty(cells)
    d = py.bellman_sweep(reward, succ, ptr, 0.9, q, expected)
    for name in BACKENDS:
        out = np.empty(cells)
        assert kernels.load(name).bellman_sweep(reward, succ, ptr, 0.9, q.copy(), out) == pytest.approx(d)
        assert out == pytest.approx(expected)
