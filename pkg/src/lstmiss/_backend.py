"""Kernel backend selection.

The compiled extension is preferred; set ``LSTMISS_PURE_PYTHON=1`` to force
the numpy fallback (useful for debugging and for the benchmark).
"""

import importlib
import os

from . import _pure


def load(name=None):
    """Return the kernel module for ``name`` ("cython" or "python")."""
    if name == "python":
        return _pure
    if name not in (None, "cython"):
        raise ValueError(f"unknown backend {name!r}")
    try:
        return importlib.import_module("lstmiss._ckernels")
    except ImportError:
        if name == "cython":
            raise
        return _pure


if os.environ.get("LSTMISS_PURE_PYTHON", "") not in ("", "0"):
    kernels = _pure
else:
    kernels = load()

BACKEND = "python" if kernels is _pure else "cython"
