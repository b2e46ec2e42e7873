import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from qoed.design import optimize_a_design
from qoed.fisher import menu_fisher
from qoed.menu import build_full_menu
from qoed.model import ModelParams

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture(scope="session")
def theta_p():
    return ModelParams(1.0, 1.0, 1.0)


@pytest.fixture(scope="session")
def theta_t():
    return ModelParams(1.1, 0.9, 1.0)


@pytest.fixture(scope="session")
def full_menu():
    return build_full_menu([1.0])


@pytest.fixture(scope="session")
def full_fisher(full_menu, theta_p):
    return menu_fisher(full_menu, theta_p)


@pytest.fixture(scope="session")
def full_design(full_fisher):
    return optimize_a_design(full_fisher)


def random_hermitian(rng, n):
    a = rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n))
    return a + a.conj().T


def random_psd(rng, n, floor=0.0):
    a = rng.normal(size=(n, n))
    return a @ a.T + floor * np.eye(n)
