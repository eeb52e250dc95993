"""Collects the acceptance verdicts and prints them after the test run."""

VERDICTS: dict = {}


def record(criterion: int, ok: bool, detail: str) -> None:
    VERDICTS[criterion] = f"criterion {criterion}: {'PASS' if ok else 'FAIL'} - {detail}"
    print(VERDICTS[criterion])


def pytest_terminal_summary(terminalreporter):
    if not VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(VERDICTS):
        terminalreporter.write_line(VERDICTS[k])
