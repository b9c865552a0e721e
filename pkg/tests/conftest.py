import pytest

_LINES = []


@pytest.fixture
def criterion():
    """Record one acceptance line and assert on it."""

    def record(number, title, ok, detail=""):
        line = f"[{'PASS' if ok else 'FAIL'}] AC{number:02d} {title}" + (f" -- {detail}" if detail else "")
        _LINES.append((number, line))
        print(line)
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter):
    if _LINES:
        terminalreporter.write_sep("=", "acceptance criteria")
        for _, line in sorted(_LINES):
            terminalreporter.write_line(line)
