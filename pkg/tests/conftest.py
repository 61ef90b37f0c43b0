import numpy as np
import pytest

from sos_lab import sampler
from sos_lab.field import TauField
from sos_lab.lattice import cube


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture(scope="session")
def sos_chain():
    """Short joint chain at L=10, shared by tests that need realistic fields."""
    cfg = sampler.SamplerConfig(L=10, n_samples=30, burn_in=40, thinning=2, seed=7)
    return sampler.run_chain(cfg)


@pytest.fixture(scope="session")
def sos_taus(sos_chain):
    return [t for _, t in sos_chain.samples]


def random_tau(box, gen, scale=1.0):
    return TauField(box, scale * gen.normal(size=len(box.edges())))


@pytest.fixture
def box9():
    return cube(4, 2)


ACCEPTANCE_LINES = []


@pytest.fixture
def acceptance(request):
    """Records one PASS/FAIL line per acceptance criterion and echoes it live."""
    reporter = request.config.pluginmanager.getplugin("terminalreporter")

    def record(number, passed, detail):
        line = f"criterion {number:2d}: {'PASS' if passed else 'FAIL'}  {detail}"
        ACCEPTANCE_LINES.append(line)
        if reporter is not None:
            reporter.write_line("")
            reporter.write_line(line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
