import numpy as np
import pytest

from crystalflow.anisotropy import catalog
from crystalflow.fields import Grid


@pytest.fixture(params=["euclidean", "ell1", "hexagon"])
def aniso2(request):
    return catalog(request.param)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def small_grid(n=32, spacing=1 / 16):
    return Grid.centered((n, n), spacing)


ACCEPTANCE_KEY = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[ACCEPTANCE_KEY] = []


@pytest.fixture
def criterion(request):
    """Record one PASS/FAIL line per acceptance criterion and print it."""
    lines = request.config.stash[ACCEPTANCE_KEY]

    def report(number: int, passed: bool, detail: str):
        line = f"criterion {number:2d}: {'PASS' if passed else 'FAIL'}  {detail}"
        lines.append(line)
        print(line)
        return passed

    return report


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(ACCEPTANCE_KEY, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)
