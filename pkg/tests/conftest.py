import numpy as np
import pytest

from glsf import Grid2D, derive_params, zero_boundary_data
from glsf.dynamics import random_smooth_state


@pytest.fixture
def grid16():
    return Grid2D(16, 16)


@pytest.fixture
def grid32():
    return Grid2D(32, 32)


@pytest.fixture
def params():
    return derive_params()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_field(grid, rng, kind="scalar"):
    if kind == "scalar":
        return rng.normal(size=grid.shape)
    if kind == "complex":
        return rng.normal(size=grid.shape) + 1j * rng.normal(size=grid.shape)
    v = rng.normal(size=(2,) + grid.shape)
    v[grid.normal_mask] = 0.0
    return v


@pytest.fixture
def smooth_state(grid32, rng):
    return random_smooth_state(grid32, rng)


@pytest.fixture
def zero_bdata32(grid32):
    return zero_boundary_data(grid32)
