"""Kernel backend selection.

The compiled Cython module is used when importable; otherwise (or when
``MDPHOM_PURE=1`` is set) the numpy fallback is used.
"""
import importlib
import os
from types import ModuleType


def load(name: str) -> ModuleType:
    """Return the backend module ``"cython"`` or ``"python"``."""
    if name == "cython":
        return importlib.import_module("mdphom._kernels")
    if name == "python":
        return importlib.import_module("mdphom._fallback")
    raise ValueError(f"unknown kernel backend {name!r}")


def available() -> list[str]:
    names = ["python"]
    try:
        load("cython")
        names.insert(0, "cython")
    except ImportError:
        pass
    return names


BACKEND = "python" if os.environ.get("MDPHOM_PURE") else available()[0]
_impl = load(BACKEND)

nearest = _impl.nearest
best_split = _impl.best_split
bellman_sweep = _impl.bellman_sweep
