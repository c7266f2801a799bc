import numpy as np
import pytest

import kadvect  # noqa: F401  (enables float64 in jax)

ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


@pytest.fixture
def record_criterion():
    def record(number: int, title: str, passed: bool, detail: str, seconds: float):
        line = (f"criterion {number} [{'PASS' if passed else 'FAIL'}] {title}: {detail} "
                f"({seconds:.1f} s)")
        ACCEPTANCE_LINES.append(line)
        print(line)
    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
