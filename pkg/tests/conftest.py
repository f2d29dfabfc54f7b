import pytest

_CRITERIA_KEY = pytest.StashKey[dict]()


def pytest_configure(config):
    config.stash[_CRITERIA_KEY] = {}


@pytest.fixture
def record_criterion(request):
    """Store a one-line verdict for an acceptance criterion; printed at the end of the run."""
    store = request.config.stash[_CRITERIA_KEY]

    def record(number: int, ok: bool, detail: str) -> None:
        store[number] = (ok, detail)

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    store = config.stash.get(_CRITERIA_KEY, {})
    if not store:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(store):
        ok, detail = store[number]
        terminalreporter.write_line(f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}")
