import numpy as np
import pytest

from momdp.pomdp import TabularPOMDP

ACCEPTANCE_LINES: list = []


def random_model(rng, S, A, O, H, concentration=1.0):
    return TabularPOMDP(
        d0=rng.dirichlet(np.full(S, concentration)),
        transitions=rng.dirichlet(np.full(S, concentration), size=(H, S, A)),
        emissions=rng.dirichlet(np.full(O, concentration), size=(H, S)),
        rewards=rng.random((H, O)),
    )


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
