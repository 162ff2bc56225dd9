import numpy as np
import pytest

from zibnp.model import Design, FitConfig
from zibnp.simulate import SimConfig, simulate


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def tiny_sim():
    return simulate(SimConfig(n=20, p=30, C_range=(4, 8), lambda0=-0.1, seed=5))


@pytest.fixture(scope="session")
def tiny_design(tiny_sim):
    d = tiny_sim.data
    return Design.from_arrays(d.Z, d.groups, d.X)


@pytest.fixture
def short_config():
    return FitConfig(iterations=30, burn_in=10, thin=2, seed=11, debug=True)


ACCEPTANCE = pytest.StashKey[list]()


@pytest.fixture(scope="session")
def acceptance_log(request):
    """Collects one summary line per acceptance criterion."""
    return request.config.stash.setdefault(ACCEPTANCE, [])


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(ACCEPTANCE, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(lines):
            terminalreporter.write_line(line)
