import numpy as np
import pytest


@pytest.fixture()
def rng():
    return np.random.default_rng(20240817)


def random_increments(rng, d, n, scale=None):
    """Increments with the 1/sqrt(n) magnitude of a diffusion on [0, 1]."""
    if scale is None:
        scale = 1.0 / np.sqrt(n)
    return rng.normal(0.0, scale, size=(d, n))
