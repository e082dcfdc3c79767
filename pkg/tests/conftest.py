import numpy as np
import pytest

from reldiv.oracle import DiscreteDist

LOSSES = ("sgan", "lsgan", "hinge")
VARIANTS = ("sy", "rp", "ra", "ralf", "rc")
RELATIVISTIC = ("rp", "ra", "ralf", "rc")


@pytest.fixture
def two_point():
    """P=(0.8, 0.2), Q=(0.2, 0.8) on {0, 1}."""
    return DiscreteDist([0.0, 1.0], [0.8, 0.2]), DiscreteDist([0.0, 1.0], [0.2, 0.8])


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
