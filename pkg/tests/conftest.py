import pytest

_ACCEPTANCE: dict = {}


@pytest.fixture
def acceptance():
    """Record ``(criterion number, passed, detail)`` for the end-of-run summary."""

    def record(n: int, passed: bool, detail: str):
        _ACCEPTANCE[n] = (bool(passed), detail)
        print(f"criterion {n}: {'PASS' if passed else 'FAIL'} ({detail})")

    return record


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_ACCEPTANCE):
        passed, detail = _ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if passed else 'FAIL'}  {detail}")
