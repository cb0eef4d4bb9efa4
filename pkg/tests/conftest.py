"""Shared pytest plumbing: print the acceptance scoreboard after the run."""

import sys


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    module = sys.modules.get("test_acceptance")
    lines = getattr(module, "SCOREBOARD", None) if module else None
    if lines:
        terminalreporter.section("acceptance scoreboard")
        for line in lines:
            terminalreporter.write_line(line)
