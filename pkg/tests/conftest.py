import pytest

from igabem.experiments import builtin_config


@pytest.fixture(scope="session")
def circle_cfg():
    return builtin_config("circle")


@pytest.fixture(scope="session")
def pacman_cfg():
    return builtin_config("pacman")


@pytest.fixture(scope="session")
def slit_cfg():
    return builtin_config("slit")


@pytest.fixture(scope="session")
def acceptance_report(request):
    lines = request.config.stash.setdefault(_REPORT, [])
    return lines.append


_REPORT = pytest.StashKey[list]()


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_REPORT, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)
