import warnings

import numpy as np
import pytest

from horolab import heintze, hyperbolic, perturbed


@pytest.fixture(scope="session")
def hyp2():
    return hyperbolic(2)


@pytest.fixture(scope="session")
def hyp3():
    return hyperbolic(3)


@pytest.fixture(scope="session")
def h15():
    return heintze([-1.0, -1.5])


@pytest.fixture(scope="session")
def h2():
    return heintze([-1.0, -2.0])


@pytest.fixture(scope="session")
def pert():
    return perturbed(heintze([-1.25, -1.5]), eps=0.05, radius=1.5)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def quiet_heintze(entries):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return heintze(entries)


@pytest.fixture(scope="session")
def ray1(h15):
    from horolab.busemann import BoundaryDirection

    return BoundaryDirection.ray(h15, [0.0, 0.0, 0.0], [-1.0, 0.0, 0.0])


@pytest.fixture(scope="session")
def h15_patch(h15, ray1):
    """Horosphere patch of a generic boundary point on the anisotropic Heintze model."""
    from horolab.horosphere import RayHorospherePatch

    return RayHorospherePatch(h15, ray1, [0.2, 0.3, -0.2], radius=0.15, order=11, t_max=16.0)


@pytest.fixture(scope="session")
def hyp_patch(hyp2):
    from horolab.busemann import BoundaryDirection
    from horolab.horosphere import RayHorospherePatch

    xi = BoundaryDirection.ray(hyp2, [0.0, 0.0, 0.0], [-1.0, 0.0, 0.0])
    return RayHorospherePatch(hyp2, xi, [0.2, 0.3, -0.2], radius=0.25, order=11, t_max=8.0)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
