"""Shared pytest wiring for the test suite.

The acceptance-gate tests announce one pass/fail line per criterion.  Output
written inside a test body is captured by pytest and hidden for passing
tests, so the lines are buffered here and emitted through the terminal
reporter at the end of the run, where they always reach the console.
"""

CRITERION_LINES: list[str] = []


def record_criterion_line(line: str) -> None:
    CRITERION_LINES.append(line)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if CRITERION_LINES:
        terminalreporter.section("acceptance criteria")
        for line in CRITERION_LINES:
            terminalreporter.line(line)
