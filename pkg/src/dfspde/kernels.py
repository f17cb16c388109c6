"""Dispatch to the compiled or the numpy kernels.

``pava``, ``evolve`` and ``mass_chunk`` resolve to the numba versions unless
``DFSPDE_NO_JIT`` is set. Both modules stay importable so benchmarks and tests
can compare them directly.
"""
from __future__ import annotations

from . import _kernels_numpy as numpy_kernels
from ._accel import USE_NUMBA, backend

if USE_NUMBA:
    from . import _kernels_numba as numba_kernels
    from ._kernels_numba import evolve, mass_chunk, pava
else:
    numba_kernels = None
    from ._kernels_numpy import evolve, mass_chunk, pava

OK, BREACH, NONFINITE = 0, 1, 2

__all__ = ["pava", "evolve", "mass_chunk", "backend", "numpy_kernels", "numba_kernels",
           "OK", "BREACH", "NONFINITE"]
