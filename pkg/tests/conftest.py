"""Collects the acceptance-criteria verdict lines and prints them once.

Each test in test_acceptance.py records a single "ACCEPTANCE n: PASS/FAIL"
line before asserting; the summary hook below echoes them at the end of the
run so a plain `pytest` invocation shows one verdict per criterion.
"""

ACCEPTANCE_LINES: "list[str]" = []


def record(line: str) -> None:
    ACCEPTANCE_LINES.append(line)
    print(line, flush=True)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for line in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(line)
