import pytest

# criterion number -> (passed, detail); filled by test_acceptance
ACCEPTANCE = {}


@pytest.fixture
def record():
    def _record(n, ok, detail=""):
        ACCEPTANCE[n] = (bool(ok), detail)
        return ok

    return _record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        tr.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
