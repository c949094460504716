import pytest

ACCEPTANCE = {}


@pytest.fixture
def record():
    """Store one acceptance verdict; printed in the terminal summary."""
    def _record(key, passed, detail):
        ACCEPTANCE[key] = (bool(passed), detail)
        return passed
    return _record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for key in sorted(ACCEPTANCE, key=lambda k: int(k.split()[0][1:])):
        ok, detail = ACCEPTANCE[key]
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {key}: {detail}")
