"""Numba on/off switch.

Set ``PPGAUTH_DISABLE_NUMBA=1`` before importing ppgauth to force the pure
numpy code paths (useful for debugging and for the benchmark comparison).
"""

import os

ENV_FLAG = "PPGAUTH_DISABLE_NUMBA"

try:
    import numba

    HAS_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None
    HAS_NUMBA = False


def numba_disabled_by_env():
    return os.environ.get(ENV_FLAG, "").strip().lower() in ("1", "true", "yes", "on")


USE_NUMBA = HAS_NUMBA and not numba_disabled_by_env()


def njit(fn):
    """Compile ``fn`` with numba if available, else return it unchanged."""
    if not HAS_NUMBA:
        return fn
    return numba.njit(cache=True, nogil=True)(fn)
