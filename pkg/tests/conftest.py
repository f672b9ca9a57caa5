import sys


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    # Replay the acceptance verdict lines after the run.  The acceptance
    # tests print them as they go, but pytest's default fd-level capture
    # hides stdout for passing tests; this section is never captured.
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "VERDICT_LINES", None) if mod else None
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
