"""Selection between the numba-compiled kernels and the pure-numpy path.

Set ``DFSPDE_NO_JIT=1`` to force the numpy path. The choice is made once at
import time; numba being unavailable also selects the numpy path.
"""
from __future__ import annotations

import importlib.util
import os
import warnings

_requested = os.environ.get("DFSPDE_NO_JIT", "").strip().lower() not in ("", "0", "false", "no")

HAVE_NUMBA = importlib.util.find_spec("numba") is not None

USE_NUMBA = HAVE_NUMBA and not _requested

if not HAVE_NUMBA and not _requested:  # pragma: no cover
    warnings.warn("numba is not available; using the slow numpy kernels", RuntimeWarning)


def backend() -> str:
    return "numba" if USE_NUMBA else "numpy"
