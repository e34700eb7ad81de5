import numpy as np
import pytest

from carnot_homog.environment import Environment, ModelParams
from carnot_homog.groups import get_group


@pytest.fixture(scope="session")
def h1():
    return get_group("heisenberg1")


@pytest.fixture(scope="session")
def engel():
    return get_group("engel")


@pytest.fixture(scope="session")
def model():
    return ModelParams(beta=2.0)


@pytest.fixture(scope="session")
def env_const():
    return Environment(kind="constant", seed=0, dim=3, a0=1.0, v0=0.0,
                       amplitude_v=0.0)


@pytest.fixture(scope="session")
def env_default():
    """The default random environment: a = 1, potential amplitude 0.5."""
    return Environment(kind="product", seed=2024, dim=3, amplitude_v=0.5)


def rand_points(g, n, seed, scale=2.0):
    rs = np.random.RandomState(seed)
    return (rs.rand(n, g.dim) - 0.5) * 2.0 * scale
