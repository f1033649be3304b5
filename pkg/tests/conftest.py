import pytest

_LINES = []


@pytest.fixture
def criterion():
    """Record a PASS/FAIL line for an acceptance criterion, then assert it."""
    def check(number: int, ok: bool, detail: str):
        line = "criterion %2d: %s  %s" % (number, "PASS" if ok else "FAIL", detail)
        _LINES.append((number, line))
        print(line)
        assert ok, line
    return check


def pytest_terminal_summary(terminalreporter):
    if _LINES:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(_LINES):
            terminalreporter.write_line(line)
