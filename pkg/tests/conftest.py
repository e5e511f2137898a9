import numpy as np
import pytest

from nldicke.model import ModelParams

# one line per acceptance criterion, printed in the terminal summary
ACCEPTANCE_LINES = {}


def cut(g, U_over_omega, N=10, n_max=9):
    """Standard cut parameters (MHz) with U given in units of omega."""
    return ModelParams.from_mhz(0.05, 1.0, 0.2, g, U_over_omega * 1.0, N, n_max)


def random_density(d, rng, rank=None):
    """Random full-rank (or given-rank) density matrix of size ``d``."""
    k = rank or d
    X = rng.normal(size=(d, k)) + 1j * rng.normal(size=(d, k))
    rho = X @ X.conj().T
    return rho / np.trace(rho)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE_LINES, key=lambda k: (int(k.split(".")[0]), k)):
        terminalreporter.write_line(ACCEPTANCE_LINES[key])
