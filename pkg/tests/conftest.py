import sys

import pytest

from gridplan.grid_model import load_fixture

FIXTURES = ("ninebus", "smib", "overload3", "doublecircuit", "twounit", "twomachine")


@pytest.fixture(scope="session")
def ninebus():
    return load_fixture("ninebus")


@pytest.fixture(scope="session")
def smib():
    return load_fixture("smib")


@pytest.fixture(scope="session")
def twounit():
    return load_fixture("twounit")


@pytest.fixture(scope="session")
def twomachine():
    return load_fixture("twomachine")


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for line in mod.summary_lines():
        terminalreporter.write_line(line)
