import pytest

import rdc


@pytest.fixture
def rt4():
    with rdc.launch(4, workers=2) as rt:
        yield rt


@pytest.fixture
def rt2():
    with rdc.launch(2, workers=2) as rt:
        yield rt


@pytest.fixture
def rt1():
    with rdc.launch(1, workers=1) as rt:
        yield rt


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
