import numpy as np
import pytest

from heisholder.params import CarnotParams
from heisholder.services.curves import close_with_geodesic, horizontal_lift
from heisholder.services.holder2d import build_tree

UNIT_SQUARE = [(0.0, 0.0), (1.0, 0.0), (1.0, 1.0), (0.0, 1.0), (0.0, 0.0)]


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture(scope="session")
def params():
    return CarnotParams()


@pytest.fixture(scope="session")
def square_loop():
    """Lift of the unit square closed by the vertical geodesic back to 0."""
    return close_with_geodesic(horizontal_lift(UNIT_SQUARE))


@pytest.fixture(scope="session")
def small_tree(square_loop, params):
    return build_tree(square_loop, 1, 2, params)


@pytest.fixture(scope="session")
def flat_tree(square_loop, params):
    return build_tree(square_loop, 0, 2, params)
