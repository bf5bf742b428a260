import numpy as np
import pytest

from raqr import defaults


@pytest.fixture(scope="session")
def system():
    return defaults.cesium_system()


@pytest.fixture(scope="session")
def chain():
    return defaults.default_chain()


@pytest.fixture(scope="session")
def diod():
    return defaults.diod_point()


@pytest.fixture(scope="session")
def bcod():
    return defaults.bcod_point()


@pytest.fixture()
def rng():
    return np.random.default_rng(20240817)


def rel_err(a, b):
    return abs(a - b) / max(abs(a), abs(b))


def central_diff(f, x, h):
    return (f(x + h) - f(x - h)) / (2.0 * h)


def log_slope(f, x, tau=0.03):
    """d f / d x by Richardson-extrapolated central differences in log space.

    Differencing f(x e^t) at t = +-tau and +-tau/2 keeps the step relative
    and cancels the O(tau^2) term, which matters because several of the
    closed-form log-derivatives under test have dimensionless slopes as
    small as 1e-7; a naive small absolute step drowns them in rounding.
    """
    import math

    def d(t):
        return (f(x * math.exp(t)) - f(x * math.exp(-t))) / (2.0 * t)

    return (4.0 * d(tau / 2.0) - d(tau)) / (3.0 * x)
