"""Shared pytest plumbing: surface the acceptance-suite verdict lines.

`tests/test_acceptance.py` records one PASS/FAIL line per criterion in
CRITERION_LINES; this hook prints them in the terminal summary so they are
visible without -s.
"""

CRITERION_LINES = []


def pytest_terminal_summary(terminalreporter):
    if CRITERION_LINES:
        terminalreporter.section("acceptance criteria")
        for line in CRITERION_LINES:
            terminalreporter.line(line)
