import pytest

_CRITERIA_LINES: list[str] = []


@pytest.fixture
def report_criterion():
    """Record and print one pass/fail line for an acceptance criterion."""

    def report(number, title, checks, elapsed):
        failed = [name for name, ok in checks if not ok]
        status = "PASS" if not failed else "FAIL"
        line = f"[criterion {number}] {status} {title} ({elapsed:.1f} s)"
        if failed:
            line += " failing: " + "; ".join(failed)
        _CRITERIA_LINES.append(line)
        print(line)
        return not failed, line

    return report


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA_LINES:
        terminalreporter.section("acceptance criteria")
        for line in _CRITERIA_LINES:
            terminalreporter.write_line(line)
