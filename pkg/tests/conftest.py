import numpy as np
import pytest

from vpe.core import PointSet


def random_points(rng, n, lo=-5.0, hi=5.0, labels=None):
    coords = rng.uniform(lo, hi, (n, 3))
    lab = None if labels is None else rng.integers(0, labels, n)
    return PointSet(coords, rng.random(n), lab)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
