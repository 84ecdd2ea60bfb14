from pathlib import Path

import numpy as np
import pytest

from litt.numkit import Rng

DATA_DIR = Path(__file__).resolve().parents[1] / "data"


@pytest.fixture
def rng():
    return Rng(1234)


def naive_moments(xs):
    n = len(xs)
    mean = sum(xs) / n
    var = sum((x - mean) ** 2 for x in xs) / n
    mu4 = sum((x - mean) ** 4 for x in xs) / n
    return mean, var, mu4


def sig(v):
    return 1.0 / (1.0 + np.exp(-v))


# acceptance results, printed once at the end of the run
ACCEPTANCE = {}


@pytest.fixture
def criterion():
    def record(n, passed, detail):
        ACCEPTANCE[n] = (bool(passed), detail)
        print(f"criterion {n}: {'PASS' if passed else 'FAIL'}  {detail}")
        return passed
    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n:>2}: {'PASS' if ok else 'FAIL'}  {detail}")
