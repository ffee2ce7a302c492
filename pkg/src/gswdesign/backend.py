"""Backend selection for the walk kernels.

The environment variable ``GSWDESIGN_BACKEND`` picks the implementation:

* ``numba`` - require the jit kernel (ImportError if numba is missing),
* ``numpy`` - force the vectorized fallback,
* unset / ``auto`` - numba when importable, numpy otherwise.

Both backends consume the same draw slots and apply the same freeze rules;
``benchmarks/backend_bench.py`` times them against each other.
"""

from __future__ import annotations

import os

from . import _kernels

_ENV_VAR = "GSWDESIGN_BACKEND"

try:
    from numba import njit as _njit

    _HAVE_NUMBA = True
except ImportError:  # pragma: no cover - exercised only without numba
    _njit = None
    _HAVE_NUMBA = False

_jit_walk = None


def _numba_walk():
    global _jit_walk
    if _jit_walk is None:
        _jit_walk = _njit(cache=True, nogil=True)(_kernels._gsw_walk_loops)
    return _jit_walk


def backend_name() -> str:
    choice = os.environ.get(_ENV_VAR, "auto").strip().lower()
    if choice in ("", "auto"):
        return "numba" if _HAVE_NUMBA else "numpy"
    if choice not in ("numba", "numpy"):
        raise ValueError(f"{_ENV_VAR} must be 'numba', 'numpy', or 'auto', got {choice!r}")
    if choice == "numba" and not _HAVE_NUMBA:
        raise ImportError(f"{_ENV_VAR}=numba but numba is not importable")
    return choice


def gsw_walk(Y, pivot_draws, step_draws, freeze_tol, backend: str | None = None):
    """Run the fused walk kernel on the selected backend."""
    name = backend or backend_name()
    if name == "numba":
        return _numba_walk()(Y, pivot_draws, step_draws, freeze_tol)
    return _kernels.gsw_walk_numpy(Y, pivot_draws, step_draws, freeze_tol)
