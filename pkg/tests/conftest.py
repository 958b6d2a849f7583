import pytest

from stefan_kpp.kinetics import make_logistic
from stefan_kpp.wave_catalog import ProblemParams, beta_star, build_catalog


@pytest.fixture(scope="session")
def logistic():
    return make_logistic()


@pytest.fixture(scope="session")
def bstar(logistic):
    return beta_star(ProblemParams(logistic, 1.0, 1.0), check=False)


@pytest.fixture(scope="session")
def medium_beta(bstar):
    return 2.0 + 0.5 * (bstar - 2.0)


@pytest.fixture(scope="session")
def small_catalog(logistic):
    return build_catalog(ProblemParams(logistic, 1.0, 0.5))


@pytest.fixture(scope="session")
def medium_catalog(logistic, medium_beta):
    return build_catalog(ProblemParams(logistic, 1.0, medium_beta))


@pytest.fixture(scope="session")
def large_catalog(logistic, bstar):
    return build_catalog(ProblemParams(logistic, 1.0, 2 * bstar))


@pytest.fixture(scope="session")
def critical_catalog(logistic):
    return build_catalog(ProblemParams(logistic, 1.0, 2.0))
