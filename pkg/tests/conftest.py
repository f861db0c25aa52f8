import pytest

# criterion number -> list of (label, passed, detail); filled by test_acceptance
ACCEPTANCE = {}


@pytest.fixture
def criterion(request):
    """Record one acceptance result; a test that raises before ``done`` is a FAIL."""
    num, label = request.node.get_closest_marker("criterion").args
    entry = {"passed": False, "detail": "did not complete"}
    ACCEPTANCE.setdefault(num, []).append((label, entry))

    def done(detail):
        entry["detail"] = detail

    yield done
    rep = getattr(request.node, "rep_call", None)
    entry["passed"] = rep is not None and rep.passed


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    if rep.when == "call":
        item.rep_call = rep


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(num, label): acceptance criterion")


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(ACCEPTANCE):
        parts = ACCEPTANCE[num]
        ok = all(e["passed"] for _, e in parts)
        detail = "; ".join(f"{label}: {'pass' if e['passed'] else 'FAIL'} ({e['detail']})"
                           for label, e in parts)
        terminalreporter.write_line(f"criterion {num}: {'PASS' if ok else 'FAIL'}  {detail}")
