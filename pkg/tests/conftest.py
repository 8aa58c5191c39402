import numpy as np
import pytest

from visbeam.datasets import DataSequence


def random_sequence(rng, sid, length, num_beams=8, labels_only=False):
    powers = rng.random((length, num_beams))
    beams = np.argmax(powers, axis=1)
    return DataSequence(sid, rng.random((length, 4)), beams, None if labels_only else powers)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# lines recorded by the acceptance suite, echoed at the end of every run
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
