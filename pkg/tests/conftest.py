"""Shared pytest hooks.

Acceptance checks append one summary line each to ``ACCEPTANCE_LINES``; the
lines are printed in the terminal summary so they survive output capture.
"""

ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
