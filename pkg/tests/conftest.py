import numpy as np
import pytest

from ttpolicy.tt import Grid, TensorTrain


def random_tt(rng, shape, ranks, grid=None, scale=1.0):
    """Random TT with given node counts and internal ranks (len = d-1)."""
    d = len(shape)
    full = [1] + list(ranks) + [1]
    cores = [scale * rng.standard_normal((full[k], shape[k], full[k + 1])) for k in range(d)]
    if grid is None:
        grid = Grid.regular([(0.0, 1.0)] * d, shape)
    return TensorTrain(cores, grid)


def random_indices(rng, shape, n):
    return np.column_stack([rng.integers(0, s, size=n) for s in shape])


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
