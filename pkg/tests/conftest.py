import numpy as np
import pytest

from latspin.lattice import Grid
from latspin.lie import so3


@pytest.fixture(scope="session")
def g():
    return so3()


@pytest.fixture
def grid32():
    return Grid((32,), (1.0 / 32,))


@pytest.fixture
def grid2d16():
    return Grid((16, 16), (1.0 / 16, 1.0 / 16))


def rng(seed=0):
    return np.random.default_rng(seed)
