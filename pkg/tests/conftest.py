import numpy as np
import pytest

from pbiharmonic.constants import make_params
from pbiharmonic.discretization import build_axisym_grid, build_grid
from pbiharmonic.minimizer import minimize_axisym, minimize_radial

BREAK_LAMBDA = -23.75


@pytest.fixture(scope="session")
def grid():
    return build_grid(1e-4, 1e4, 1025)


@pytest.fixture(scope="session")
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def P624():
    return make_params(6, 2, 4, 0.0)


@pytest.fixture(scope="session")
def radial_624(grid, P624):
    return minimize_radial(P624, grid)


@pytest.fixture(scope="session")
def radial_break(grid):
    return minimize_radial(make_params(6, 2, 4, BREAK_LAMBDA), grid)


@pytest.fixture(scope="session")
def axisym_624(radial_624, P624):
    agrid = build_axisym_grid(1e-4, 1e4, 1025, 16, 6)
    return minimize_axisym(P624, agrid, radial_624.field)


@pytest.fixture(scope="session")
def breaking_runs():
    """Radial and zonal minimizers at the breaking lambda on two resolutions."""
    P = make_params(6, 2, 4, BREAK_LAMBDA)
    runs = {}
    for M in (513, 1025):
        rad = minimize_radial(P, build_grid(1e-4, 1e4, M))
        axi = minimize_axisym(P, build_axisym_grid(1e-4, 1e4, M, 16, 6), rad.field)
        runs[M] = (rad, axi)
    return runs


def bump_profile(grid, center=0.0, width=0.6):
    """Smooth compactly supported bump in log r."""
    from pbiharmonic.discretization import RadialProfile

    t = (grid.s - center) / width
    u = np.zeros(grid.M)
    inside = np.abs(t) < 1
    u[inside] = np.exp(1 - 1 / (1 - t[inside] ** 2))
    return RadialProfile(grid, u)


# one line per acceptance criterion, printed after the run
ACCEPTANCE_LINES = []


def record(criterion, passed, detail):
    ACCEPTANCE_LINES.append(f"criterion {criterion}: {'PASS' if passed else 'FAIL'}  {detail}")
    print(ACCEPTANCE_LINES[-1])


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
