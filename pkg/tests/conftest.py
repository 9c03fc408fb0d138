import numpy as np
import pytest

from mars.utils.projector import ScanGeometry, build_system_matrix
from mars.utils.simulate import Ellipse, phantom_generate


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def small_geom():
    return ScanGeometry(height=16, width=16, pixel_size=4.0, n_views=24, n_bins=24)


@pytest.fixture(scope="session")
def small_A(small_geom):
    return build_system_matrix(small_geom)


@pytest.fixture(scope="session")
def small_phantom(small_geom):
    ellipses = [
        Ellipse(0.0, 0.0, 26.0, 22.0, 0.0, 1000.0),
        Ellipse(-8.0, 4.0, 8.0, 6.0, 30.0, 80.0),
    ]
    return phantom_generate(ellipses, small_geom.height, small_geom.width, small_geom.pixel_size)
