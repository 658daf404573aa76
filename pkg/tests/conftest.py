import pytest

ACCEPTANCE = {}
N_CRITERIA = 10


@pytest.fixture(scope="session")
def acceptance():
    """Recorder for acceptance verdicts: ``acceptance(n, ok, detail)``."""
    def record(n: int, ok: bool, detail: str) -> None:
        ACCEPTANCE[n] = (bool(ok), detail)
        print(_line(n))
    return record


def _line(n: int) -> str:
    if n not in ACCEPTANCE:
        return f"criterion {n:2d}: FAIL (not run or errored before a verdict)"
    ok, detail = ACCEPTANCE[n]
    return f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}"


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance")
    for n in range(1, N_CRITERIA + 1):
        terminalreporter.write_line(_line(n))
