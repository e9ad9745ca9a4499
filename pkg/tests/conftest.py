import pytest

ACCEPTANCE = {}


@pytest.fixture
def verdict():
    """Record one acceptance line: verdict(label, ok, detail); ok=None means not run."""
    def record(label, ok, detail=""):
        ACCEPTANCE[label] = (ok, detail)
        print(f"CRITERION {label}: {_status(ok)}  {detail}")
        return ok
    return record


def _status(ok):
    return "NOT RUN" if ok is None else "PASS" if ok else "FAIL"


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for label in sorted(ACCEPTANCE, key=lambda s: (int("".join(c for c in s if c.isdigit())), s)):
        ok, detail = ACCEPTANCE[label]
        terminalreporter.write_line(f"CRITERION {label}: {_status(ok)}  {detail}")
