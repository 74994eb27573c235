import pytest

_LINES = []


@pytest.fixture
def report_line():
    """Record a one-line verdict that is echoed in the terminal summary."""
    def add(line: str):
        _LINES.append(line)
        print(line)
    return add


def pytest_terminal_summary(terminalreporter):
    if _LINES:
        terminalreporter.section("acceptance criteria")
        for line in _LINES:
            terminalreporter.write_line(line)
