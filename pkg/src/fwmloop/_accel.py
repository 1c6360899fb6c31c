"""Optional numba acceleration.

Set ``FWMLOOP_NO_NUMBA=1`` to force the pure-numpy path even when numba is
installed.  ``default_backend()`` is read at call time, so tests can flip it.
"""

from __future__ import annotations

import os

try:
    import numba

    NUMBA_AVAILABLE = True
except ImportError:  # pragma: no cover - exercised only without numba
    numba = None
    NUMBA_AVAILABLE = False

BACKENDS = ("numba", "numpy")


def numba_disabled() -> bool:
    return os.environ.get("FWMLOOP_NO_NUMBA", "").strip().lower() in ("1", "true", "yes", "on")


def default_backend() -> str:
    if NUMBA_AVAILABLE and not numba_disabled():
        return "numba"
    return "numpy"


def njit(*args, **kwargs):
    """``numba.njit`` when available, identity decorator otherwise."""
    if NUMBA_AVAILABLE:
        return numba.njit(*args, **kwargs)

    def wrap(fn):
        return fn

    if len(args) == 1 and callable(args[0]) and not kwargs:
        return args[0]
    return wrap
