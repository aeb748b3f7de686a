import pytest

_CRITERIA = pytest.StashKey[dict]()


@pytest.fixture(scope="session")
def criteria(request):
    """Collects one verdict line per acceptance criterion, printed in the terminal summary."""
    return request.config.stash.setdefault(_CRITERIA, {})


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_CRITERIA, {})
    if not lines:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(lines):
        terminalreporter.write_line(lines[key])
