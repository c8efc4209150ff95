import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(20260827)


def random_spins(rng, shape):
    """Random +-1 int8 array."""
    return (rng.integers(0, 2, size=shape) * 2 - 1).astype(np.int8)
