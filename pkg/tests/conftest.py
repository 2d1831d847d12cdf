import pytest

ACCEPTANCE_LINES: list = []


@pytest.fixture
def report_line():
    """Record one acceptance outcome line; all lines are echoed in the terminal summary."""
    def record(text):
        ACCEPTANCE_LINES.append(text)
        print(text)
    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
