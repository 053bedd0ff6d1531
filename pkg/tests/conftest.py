import numpy as np
import pytest

from microcell.cell_mesh import MaterialSpec, build_grid
from microcell.rbf_levelset import HeavisideParams, build_interpolation, default_bandwidth, grid_knots


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def mat():
    return MaterialSpec()


@pytest.fixture
def grid4():
    return build_grid(4, 4)


@pytest.fixture
def grid10():
    return build_grid(10, 10)


@pytest.fixture
def hp10(grid10):
    return HeavisideParams(0.001, default_bandwidth(grid10))


@pytest.fixture
def A10(grid10):
    return build_interpolation(grid_knots(grid10), grid10)


def random_density(rng, n, eta=0.001):
    return rng.uniform(eta, 1.0, n)


CRITERIA_KEY = pytest.StashKey[dict]()


def pytest_configure(config):
    config.stash[CRITERIA_KEY] = {}


@pytest.fixture
def criterion(request):
    """Record a pass/fail verdict for one acceptance criterion, then assert it."""
    table = request.config.stash[CRITERIA_KEY]

    def check(number: int, title: str, ok: bool, detail: str):
        table[number] = (title, bool(ok), detail)
        print(f"criterion {number} {'PASS' if ok else 'FAIL'}: {title}: {detail}")
        assert ok, detail

    return check


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    table = config.stash.get(CRITERIA_KEY, {})
    if not table:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(table):
        title, ok, detail = table[number]
        terminalreporter.write_line(f"criterion {number:2d} {'PASS' if ok else 'FAIL'}  {title}: {detail}")
