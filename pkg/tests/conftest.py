import math

import numpy as np
import pytest

from blochscat.torus import FiberContext, build_potential


@pytest.fixture(scope="session")
def pm_const4():
    return build_potential(4.0)


@pytest.fixture(scope="session")
def pm_const_neg1():
    return build_potential(-1.0)


@pytest.fixture(scope="session")
def pm_const2():
    return build_potential(2.0)


@pytest.fixture(scope="session")
def pm_zero():
    return build_potential(0.0)


@pytest.fixture(scope="session")
def pm_shifted_cos():
    # V(theta) = 2 + cos(theta), sign-definite
    return build_potential(("trig_poly", {0: 2.0, 1: 0.5}), 1024)


@pytest.fixture(scope="session")
def pm_trig():
    # generic sign-definite trigonometric potential
    return build_potential(("trig_poly", {0: 2.0, 1: 0.4 + 0.1j, 2: 0.2}))


@pytest.fixture(scope="session")
def pm_resonant():
    # constant V = -sqrt(3): at k = 0 the threshold lambda = 1 carries a
    # level-1 kernel on the modes +-2 (lambda_{0,2} - V^2 = 1).
    return build_potential(-math.sqrt(3.0))


@pytest.fixture(scope="session")
def fib0():
    return FiberContext(0.0)


@pytest.fixture(scope="session")
def fib25():
    return FiberContext(0.25)


@pytest.fixture(scope="session")
def fib01():
    return FiberContext(0.1)


def random_sign_definite(rng, degree=2, base=1.5):
    """Random trig polynomial bounded away from zero (sign-definite)."""
    coeffs = {0: base + rng.uniform(0.0, 1.0)}
    budget = 0.8 * coeffs[0]
    for j in range(1, degree + 1):
        mag = rng.uniform(0.0, budget / (2 * degree))
        phase = rng.uniform(0, 2 * np.pi)
        coeffs[j] = mag * np.exp(1j * phase)
    return build_potential(("trig_poly", coeffs))
