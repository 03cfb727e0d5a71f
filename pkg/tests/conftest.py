import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from polyreg import Grid, disk_mask


@pytest.fixture
def unit_grid():
    """9 x 9 grid over the unit square, no mask."""
    return Grid(((0.0, 1.0), (0.0, 1.0)), 9, 9)


@pytest.fixture
def disk_grid():
    """24 x 24 grid over [-1, 1]^2 with the unit-disk mask."""
    base = Grid(((-1.0, 1.0), (-1.0, 1.0)), 24, 24)
    return base.with_mask(disk_mask(base, radius=1.0))


@pytest.fixture
def rng():
    return np.random.default_rng(20240613)
