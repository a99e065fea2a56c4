import numpy as np
import pytest
from hypothesis import settings

from distclust import Dataset

settings.register_profile("default", deadline=None, max_examples=40)
settings.load_profile("default")


@pytest.fixture
def line4():
    return Dataset.from_points([0.0, 1.0, 10.0, 11.0])


@pytest.fixture
def line5():
    return Dataset.from_points([0.0, 1.0, 10.0, 11.0, 100.0])


def random_points(seed, n, d=2, scale=10.0):
    return Dataset.from_points(np.random.default_rng(seed).uniform(0, scale, (n, d)))


ACCEPTANCE = {}


def record(number: int, ok: bool, detail: str) -> None:
    """Remember one acceptance verdict; printed in the terminal summary."""
    line = f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE[number] = line
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for number in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[number])
