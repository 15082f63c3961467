import pytest
from hypothesis import settings

# fixed example generation so the suite gives the same verdict on every run
settings.register_profile("repro", derandomize=True, deadline=None)
settings.load_profile("repro")

_VERDICTS: dict[int, str] = {}


@pytest.fixture
def verdict():
    """Record a one-line pass/fail summary for an acceptance criterion."""

    def record(number: int, passed: bool, detail: str) -> bool:
        _VERDICTS[number] = f"criterion {number:>2}: {'PASS' if passed else 'FAIL'}  {detail}"
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if not _VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_VERDICTS):
        terminalreporter.write_line(_VERDICTS[number])
