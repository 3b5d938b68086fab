import numpy as np
import pytest

from gravalloc.geometry import SphereParams
from gravalloc.processes import sample_uniform, uniform_sphere_points


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)


@pytest.fixture
def params16():
    return SphereParams(16)


@pytest.fixture
def cfg64():
    return sample_uniform(64, 1234)


def random_sphere_points(rng, m, params):
    return uniform_sphere_points(rng, m, params)
