import pytest

_LINES = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[_LINES] = []


@pytest.fixture
def report(request):
    """Record one pass/fail line for the end-of-run acceptance summary."""

    def _report(criterion: int, passed: bool, detail: str) -> bool:
        status = "PASS" if passed else "FAIL"
        request.config.stash[_LINES].append(f"[{status}] criterion {criterion:>2}: {detail}")
        return passed

    return _report


def pytest_terminal_summary(terminalreporter, config):
    lines = sorted(config.stash[_LINES], key=lambda s: int(s.split("criterion")[1].split(":")[0]))
    if not lines:
        return
    terminalreporter.section("acceptance criteria")
    for line in lines:
        terminalreporter.write_line(line)
