import numpy as np
import pytest
from hypothesis import settings

settings.register_profile("lfgp", deadline=None, max_examples=60, derandomize=True)
settings.load_profile("lfgp")


@pytest.fixture
def rng():
    return np.random.default_rng(20240607)


_ACCEPTANCE_LINES = []


def pytest_runtest_logreport(report):
    if report.when == "call":
        for key, value in report.user_properties:
            if key == "acceptance":
                _ACCEPTANCE_LINES.append(value)


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
