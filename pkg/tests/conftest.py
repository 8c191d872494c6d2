"""Shared pytest wiring.

The acceptance tests emit one measured pass/fail line each; stdout capture
hides those on success, so they are collected here and repeated in the
end-of-run summary where a plain `pytest -v` shows them.
"""

_verdicts = []


def record_verdict(line):
    _verdicts.append(line)


def pytest_terminal_summary(terminalreporter):
    if _verdicts:
        terminalreporter.section("acceptance criteria")
        for line in _verdicts:
            terminalreporter.line(line)
