import numpy as np
import pytest

from crcterm.grids import make_grid
from crcterm.models import HestonParams, VasicekParams


@pytest.fixture
def grid9():
    return make_grid(2.0, 9)


@pytest.fixture
def grid17():
    return make_grid(4.0, 17)


@pytest.fixture
def vas_params():
    return VasicekParams(a=0.3, b=0.012, sigma=0.008)


@pytest.fixture
def heston_params():
    return HestonParams(a=3.0, b=0.04, c=0.4, rho=-0.6,
                        dt=1.0 / 252.0, substeps=2)


@pytest.fixture
def rng():
    return np.random.default_rng(20240811)
