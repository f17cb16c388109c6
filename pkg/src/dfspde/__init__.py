"""Simulation of measure-valued diffusions through their distribution functions.

The field ``Y_t(x) = X_t((-inf, x])`` of an interacting super-Brownian motion
or Fleming-Viot process is advanced by a monotone finite-difference scheme
on a spatial grid, driven by white noise binned over mass levels.
"""
from .core import LevelGrid, MonotoneField, SpatialGrid, generalized_inverse
from .errors import (DomainError, EnsembleAbort, NumericalBlowup, PreconditionError,
                     TruncationBreach)
from .integrator import SchemeConfig, TrajectoryRecord, run, run_ensemble, step
from .kernels import backend
from .models import FvModel, SbmModel, variance_rate
from .noise import SeedSpec

__version__ = "0.1.0"

__all__ = [
    "DomainError", "EnsembleAbort", "FvModel", "LevelGrid", "MonotoneField", "NumericalBlowup",
    "PreconditionError", "SbmModel", "SchemeConfig", "SeedSpec", "SpatialGrid", "TrajectoryRecord",
    "TruncationBreach", "backend", "generalized_inverse", "run", "run_ensemble", "step",
    "variance_rate",
]
