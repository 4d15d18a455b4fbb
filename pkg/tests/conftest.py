"""Shared pytest plumbing for the acceptance suite.

test_acceptance.py appends one verdict line per criterion to
``acceptance_lines``; printing them in the terminal summary keeps the
per-criterion PASS/FAIL report visible even when capture is on.
"""

acceptance_lines: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if not acceptance_lines:
        return
    terminalreporter.section("acceptance criteria")
    for line in acceptance_lines:
        terminalreporter.write_line(line)
