import math
from fractions import Fraction

import pytest

from nonint.mapcore import AnalyticMap, henon, linear_saddle, load_map
from nonint.config import bundled_map
from nonint.polynomial import Polynomial

# fixed points of the Henon map at a=1.4, b=0.3 from a x^2 + (1-b) x - 1 = 0
A, B = 1.4, 0.3
X_PLUS = (-(1 - B) + math.sqrt((1 - B) ** 2 + 4 * A)) / (2 * A)
X_MINUS = (-(1 - B) - math.sqrt((1 - B) ** 2 + 4 * A)) / (2 * A)


def poly_map(rows_list, inverse=None, name="test"):
    n = len(rows_list)
    comps = tuple(Polynomial.from_rows(n, rows) for rows in rows_list)
    inv = None if inverse is None else tuple(Polynomial.from_rows(n, r) for r in inverse)
    return AnalyticMap(n, comps, inv, name=name)


@pytest.fixture(scope="session")
def L():
    return linear_saddle()


@pytest.fixture(scope="session")
def h14():
    return henon("1.4", "0.3")


@pytest.fixture(scope="session")
def h6():
    return henon("6.0", "0.3")


@pytest.fixture(scope="session")
def quad_unstable():
    """(x, y) -> (x/2 + y^2, 2y); its unstable chart is (2t^2/7, t)."""
    return poly_map([[[[1, 0], Fraction(1, 2)], [[0, 2], 1]], [[[0, 1], 2]]], name="quad")


@pytest.fixture(scope="session")
def cubic():
    return load_map(bundled_map("normalform-cubic.yaml"))


@pytest.fixture(scope="session")
def sheared():
    return load_map(bundled_map("sheared-conjugate.yaml"))


@pytest.fixture(scope="session")
def henon_run():
    """The bundled horseshoe configuration run once through every stage."""
    from nonint.config import bundled_config, load_config
    from nonint.pipeline import run_pipeline

    return run_pipeline(load_config(bundled_config("henon-horseshoe.cfg")))


# ------------------------------------------------------------ acceptance lines

ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
