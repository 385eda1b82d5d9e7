import numpy as np
import pytest

from flsem import datagen
from flsem.numerics import default_kernel, gram_matrix


@pytest.fixture(scope="session")
def example1():
    """A single Example-1 dataset with endogeneity."""
    return datagen.generate(datagen.SimConfig(rho2=0.7, seed=11))


@pytest.fixture(scope="session")
def example1_gram(example1):
    return gram_matrix(default_kernel(), example1.grid)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


_ACCEPTANCE = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[_ACCEPTANCE] = []


@pytest.fixture
def acceptance_log(request):
    """Append ``(criterion, passed, detail)``; echoed in the terminal summary."""
    return request.config.stash[_ACCEPTANCE]


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash[_ACCEPTANCE]
    if not lines:
        return
    terminalreporter.section("acceptance criteria")
    for name, ok, detail in sorted(lines, key=lambda t: t[0]):
        terminalreporter.write_line(f"{name}: {'PASS' if ok else 'FAIL'}  {detail}")
