import pytest

ACCEPTANCE = pytest.StashKey[dict]()


def pytest_configure(config):
    config.stash[ACCEPTANCE] = {}
    config.addinivalue_line("markers", "criterion(num, title): numbered acceptance criterion")


def _line(num, title, ok, detail):
    return f"[{'PASS' if ok else 'FAIL'}] criterion {num:>2} {title}: {detail}"


@pytest.fixture
def verdict(request):
    """Record the criterion's pass/fail line, then assert it."""
    num, title = request.node.get_closest_marker("criterion").args
    lines = request.config.stash[ACCEPTANCE]

    def record(ok: bool, detail: str):
        lines[num] = _line(num, title, ok, detail)
        print(lines[num])
        assert ok, detail
    return record


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None or rep.when != "call":
        return
    num, title = marker.args
    lines = item.config.stash[ACCEPTANCE]
    if rep.failed and not lines.get(num, "").startswith("[FAIL]"):
        crash = getattr(rep.longrepr, "reprcrash", None)
        lines[num] = _line(num, title, False, crash.message if crash else "error")
    elif rep.passed and num not in lines:
        lines[num] = _line(num, title, True, "ok")


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash[ACCEPTANCE]
    if lines:
        terminalreporter.section("acceptance criteria")
        for num in sorted(lines):
            terminalreporter.write_line(lines[num])
