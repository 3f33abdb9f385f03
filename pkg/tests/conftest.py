import pytest

_RESULTS: list[tuple[str, bool, str]] = []


@pytest.fixture
def record():
    """Log one acceptance line; callers assert on the same condition afterwards."""

    def _record(name: str, ok: bool, detail: str) -> bool:
        _RESULTS.append((name, ok, detail))
        print(f"{'PASS' if ok else 'FAIL'} {name}: {detail}")
        return ok

    return _record


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for name, ok, detail in _RESULTS:
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'} {name}: {detail}")
