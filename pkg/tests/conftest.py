import pytest

_LINES = pytest.StashKey[list]()


@pytest.fixture
def report(request):
    """Record one PASS/FAIL line for the acceptance summary."""
    lines = request.config.stash.setdefault(_LINES, [])

    def _emit(name, ok, detail):
        line = f"{name}: {'PASS' if ok else 'FAIL'}  {detail}"
        lines.append(line)
        print(line)
        return ok

    return _emit


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_LINES, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
