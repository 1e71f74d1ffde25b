import numpy as np
import pytest

from cizf.channel import RandomSource, generate_rayleigh, gram
from cizf.precoding import ci_matrix, draw_symbols


@pytest.fixture
def rng():
    return RandomSource(2024, 0).generator()


def random_instance(gen, k=4, n_tx=None):
    h = generate_rayleigh(k, n_tx or k, gen)
    s = draw_symbols(k, gen)
    r = gram(h)
    return h, s, r, ci_matrix(r, s)


@pytest.fixture
def instance(rng):
    return random_instance(rng)


def pytest_configure(config):
    np.set_printoptions(precision=6, suppress=True)


# Filled by the acceptance module; printed after the run.
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
