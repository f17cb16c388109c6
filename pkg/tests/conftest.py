import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from dfspde.core import LevelGrid, MonotoneField, SpatialGrid  # noqa: E402
from dfspde.models import SbmModel  # noqa: E402


@pytest.fixture
def grid():
    return SpatialGrid(-6.0, 6.0, 64)


@pytest.fixture
def sbm():
    return SbmModel(LevelGrid(8.0, 64), gamma_prime=0.0)


@pytest.fixture
def gauss(grid):
    return MonotoneField.gaussian_cdf(grid, 0.0, 0.5, 1.0)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
