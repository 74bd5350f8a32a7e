import numpy as np
import pytest

from fedravan.linalg import make_stream

# criterion lines collected by the acceptance module, echoed after the run
ACCEPTANCE_LINES: list = []


@pytest.fixture
def stream():
    return make_stream(1234, "tests")


@pytest.fixture
def rng():
    return np.random.default_rng(99)


@pytest.fixture
def criterion():
    def record(number: int, title: str, passed: bool, detail: str) -> bool:
        line = f"criterion {number:>2} {'PASS' if passed else 'FAIL'}  {title}: {detail}"
        ACCEPTANCE_LINES.append((number, line))
        print(line)
        return passed
    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
