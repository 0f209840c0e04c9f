import numpy as np
import pytest

from dkt.numeric import STREAM_TEST, Rng

ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def rng():
    return Rng(1234, STREAM_TEST)


def random_matrix(rng, *shape):
    return rng.normal(size=shape)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
