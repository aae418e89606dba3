"""Shared pytest wiring.

test_acceptance appends its PASS/FAIL lines to `acceptance_lines`; echoing
them from the terminal summary keeps the gate readable in the run log even
though output during the tests themselves is captured.
"""

acceptance_lines = []


def pytest_terminal_summary(terminalreporter):
    if acceptance_lines:
        terminalreporter.section("acceptance criteria")
        for line in acceptance_lines:
            terminalreporter.line(line)
