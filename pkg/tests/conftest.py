import warnings

import numpy as np
import pytest

from combwalk.comb import CombConfig, sample_comb

_REPORT = []


def report(label, passed, detail=""):
    """Record one acceptance line; it is printed now and again in the terminal summary."""
    line = f"[{'PASS' if passed else 'FAIL'}] {label}" + (f": {detail}" if detail else "")
    _REPORT.append(line)
    print(line)
    return passed


@pytest.fixture
def acceptance():
    return report


def pytest_terminal_summary(terminalreporter):
    if _REPORT:
        terminalreporter.section("acceptance criteria")
        for line in _REPORT:
            terminalreporter.write_line(line)


def all_combs(n, boundary="open"):
    """Every occupancy pattern of n sites."""
    for k in range(2 ** n):
        chi = [(k >> i) & 1 for i in range(n)]
        yield CombConfig(np.array(chi, dtype=bool), boundary)


@pytest.fixture
def quiet():
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        yield


@pytest.fixture
def rand_comb():
    def make(p=0.5, n=20, boundary="open", seed=0):
        return sample_comb(p, n, boundary, seed)
    return make
