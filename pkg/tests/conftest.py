import pytest

from quickdetect.models import LikelihoodRatioModel

#: acceptance verdicts collected during the session, printed in the summary
ACCEPTANCE_LINES: list[str] = []


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: long-running numerical checks")
    config.addinivalue_line("markers", "acceptance: reproduction criteria of the package")


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1])):
        terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def gauss01():
    return LikelihoodRatioModel.gaussian(0.1)


@pytest.fixture(scope="session")
def gauss05():
    return LikelihoodRatioModel.gaussian(0.5)


@pytest.fixture(scope="session")
def expo11():
    return LikelihoodRatioModel.exponential(1.1)
