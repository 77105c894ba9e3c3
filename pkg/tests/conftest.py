from hypothesis import HealthCheck, settings

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

import pytest

_ACCEPTANCE = []


@pytest.fixture
def verdict():
    """Record one acceptance line: verdict(number, passed, detail, seconds)."""
    def record(number, passed, detail, seconds):
        _ACCEPTANCE.append((number, bool(passed), detail, seconds))
        return passed
    return record


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number, passed, detail, seconds in sorted(_ACCEPTANCE, key=lambda r: r[0]):
        tag = "PASS" if passed else "FAIL"
        terminalreporter.write_line(f"criterion {number:>2}: {tag}  {detail}  ({seconds:.2f} s)")
