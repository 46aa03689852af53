import numpy as np
import pytest

from bhflow import Grid


def random_modes(grid, rng, scale=0.3, modes=4):
    """Smooth random mean-zero field from low cosine modes (admissible scale)."""
    coords = grid.mesh()
    field = np.zeros(grid.shape)
    for a in range(grid.dim):
        lo, hi = grid.extents[a]
        xhat = np.broadcast_to((coords[a] - lo) / (hi - lo), grid.shape)
        for k in range(1, modes + 1):
            field = field + rng.uniform(-scale, scale) * np.sqrt(2) * np.cos(k * np.pi * xhat)
    return field


@pytest.fixture
def grid512():
    return Grid([(0.0, 1.0)], [512])


@pytest.fixture
def grid256():
    return Grid([(0.0, 1.0)], [256])


@pytest.fixture
def grid64():
    return Grid([(0.0, 1.0)], [64])


@pytest.fixture
def grid2d():
    return Grid([(0.0, 1.0), (0.0, 1.0)], [24, 20])
