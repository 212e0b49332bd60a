import numpy as np
import pytest

from betalab.equilibrium import equilibrium_cached
from betalab.potential import Potential


@pytest.fixture(scope="session")
def gauss():
    return Potential.gaussian()


@pytest.fixture(scope="session")
def quartic():
    return Potential.quartic()


@pytest.fixture(scope="session")
def eq_gauss(gauss):
    return equilibrium_cached(gauss)


@pytest.fixture(scope="session")
def eq_quartic(quartic):
    return equilibrium_cached(quartic)


@pytest.fixture()
def rng():
    return np.random.default_rng(20260814)
