import pytest

from kingstab.steady_state import build_king, kepler_stub


@pytest.fixture(scope="session")
def model():
    return build_king()


@pytest.fixture(scope="session")
def kepler():
    return kepler_stub(1.0)


def pytest_terminal_summary(terminalreporter):
    from test_acceptance import RESULTS

    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in RESULTS:
            terminalreporter.write_line(line)
