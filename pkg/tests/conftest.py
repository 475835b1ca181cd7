from __future__ import annotations

# (number, title, passed, seconds) rows recorded by tests/test_acceptance.py
ACCEPTANCE_RESULTS: list[tuple[int, str, bool, float]] = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number, title, passed, seconds in sorted(ACCEPTANCE_RESULTS):
        terminalreporter.write_line(f"criterion {number:2d} {'PASS' if passed else 'FAIL'}  {title}  ({seconds:.2f} s)")
