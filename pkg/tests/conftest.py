import os
import sys

import numpy as np
import pytest

HERE = os.path.dirname(__file__)
sys.path.insert(0, HERE)

FAITHFUL = os.path.join(HERE, "fixtures", "faithful.csv")


@pytest.fixture(scope="session")
def faithful_path():
    return FAITHFUL


@pytest.fixture(scope="session")
def faithful_waiting():
    return np.genfromtxt(FAITHFUL, delimiter=",", names=True)["waiting"]


# one line per acceptance criterion, filled in by test_acceptance.py
CRITERIA = {}


def record(number, title, passed, detail=""):
    CRITERIA[number] = (title, bool(passed), detail)
    line = f"criterion {number:>2} {'PASS' if passed else 'FAIL'}  {title}"
    print(line + (f"  [{detail}]" if detail else ""))
    return passed


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(CRITERIA):
        title, passed, detail = CRITERIA[number]
        line = f"criterion {number:>2} {'PASS' if passed else 'FAIL'}  {title}"
        terminalreporter.write_line(line + (f"  [{detail}]" if detail else ""))
