import pytest

_ACCEPTANCE: dict[int, tuple[bool, str, str]] = {}


@pytest.fixture
def record():
    """Register one acceptance line: record(number, title, passed, detail)."""

    def _record(number: int, title: str, passed: bool, detail: str) -> bool:
        _ACCEPTANCE[number] = (bool(passed), title, detail)
        print(f"\n[{'PASS' if passed else 'FAIL'}] {number:>2}. {title}: {detail}")
        return passed

    return _record


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_ACCEPTANCE):
        passed, title, detail = _ACCEPTANCE[number]
        terminalreporter.write_line(f"[{'PASS' if passed else 'FAIL'}] {number:>2}. {title}: {detail}")
