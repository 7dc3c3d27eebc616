import numpy as np
import pytest

from pyramidqa.rng import Rng

# Verdict lines appended by the acceptance tests; echoed after the run so
# they survive output capture and always reach the terminal.
ACCEPTANCE_VERDICTS = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_VERDICTS:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_VERDICTS:
            terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return Rng(42)


@pytest.fixture(autouse=True)
def _no_global_numpy_seed_leak():
    # Library code must never touch numpy's global generator; seed it here
    # so any accidental use would at least be reproducible in CI.
    np.random.seed(1234)
    yield
