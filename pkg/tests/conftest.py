import sys

import numpy as np
import pytest

from penaltyddm.forms import Discretization
from penaltyddm.material import omega_rational
from penaltyddm.mesh import generate_split_body, generate_stacked_blocks, parse_problem


ONE_BODY = """\
body 1 lambda 1.5 mu 1.0 omega zero
node 1 0 0
node 2 1 0
node 3 1 1
node 4 0 1
node 5 0.5 0.5
element 1 1 2 5
element 2 2 3 5
element 3 3 4 5
element 4 4 1 5
bedge 1 2 dirichlet
bedge 2 3 free
bedge 3 4 free
bedge 4 1 free
bodyforce 1 0.3 -1
"""


@pytest.fixture(scope="session")
def one_body():
    """A clamped square of four triangles under body force, no contact."""
    return Discretization(parse_problem(ONE_BODY))


@pytest.fixture(scope="session")
def blocks2():
    """Two stacked blocks, 4 x 4 elements each, linear material."""
    return Discretization(generate_stacked_blocks(2, 4, load=1.0))


@pytest.fixture(scope="session")
def blocks2_gap():
    return Discretization(generate_stacked_blocks(2, 4, gap0=0.05, load=0.0))


@pytest.fixture(scope="session")
def blocks2_nonlinear():
    return Discretization(generate_stacked_blocks(2, 4, load=200.0, omega=omega_rational(0.5)))


@pytest.fixture(scope="session")
def split4():
    return Discretization(generate_split_body(4, load=1.0))


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def pytest_terminal_summary(terminalreporter):
    """Print the one-line verdict of every acceptance criterion that ran."""
    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(mod.RESULTS):
        terminalreporter.write_line(mod.RESULTS[k])
