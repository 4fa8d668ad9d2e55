import math

import pytest

ACCEPTANCE_LINES = []


def within_sigma(observed, p, n, k=4.0):
    """|observed - p| <= k binomial standard deviations at n trials."""
    sigma = math.sqrt(p * (1 - p) / n)
    return abs(observed - p) <= k * sigma


def record(criterion, passed, detail):
    ACCEPTANCE_LINES.append(f"[{'PASS' if passed else 'FAIL'}] {criterion}: {detail}")


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def rng():
    from qrelay.core import RandomStream

    return RandomStream(12345)
