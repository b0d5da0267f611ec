"""Numba switch.

Hot kernels are compiled with numba unless ``ASRQE_DISABLE_JIT`` is set to a
truthy value (``1``, ``true``, ``yes``) or numba cannot be imported, in which
case the pure-numpy implementations in :mod:`asrqe.kernels` are used.
"""

from __future__ import annotations

import os

ENV_FLAG = "ASRQE_DISABLE_JIT"

try:
    import numba

    HAS_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None
    HAS_NUMBA = False


def _flag_set(value: str | None) -> bool:
    return (value or "").strip().lower() in {"1", "true", "yes", "on"}


JIT_ENABLED = HAS_NUMBA and not _flag_set(os.environ.get(ENV_FLAG))


def njit(func):
    """Compile ``func`` in nopython mode when numba is importable.

    Compilation happens even when the JIT path is disabled by the environment
    flag so both paths stay available for tests and benchmarks; the flag only
    decides which one the public dispatchers use.
    """
    if not HAS_NUMBA:
        return func
    return numba.njit(cache=True)(func)
