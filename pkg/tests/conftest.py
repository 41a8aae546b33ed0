import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", max_examples=40, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# --- acceptance report -------------------------------------------------------------
# Tests marked ``criterion(number, title)`` get one PASS/FAIL line in the terminal summary.
# A test can attach a short measurement with ``record_property("detail", text)``.

_criteria = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    number, title = mark.args
    if rep.when == "call" or (rep.when == "setup" and not rep.passed):
        detail = dict(item.user_properties).get("detail", "")
        if rep.passed:
            status = "PASS"
        elif hasattr(rep, "wasxfail"):
            status = "FAIL (expected)"
            detail = detail or rep.wasxfail
        elif rep.skipped:
            status = "SKIP"
        else:
            status = "FAIL"
            if not detail and call.excinfo is not None:
                detail = call.excinfo.exconly().splitlines()[0][:160]
        _criteria[number] = (title, status, detail)


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_criteria):
        title, status, detail = _criteria[number]
        line = f"criterion {number:>2} {status:<5} {title}"
        terminalreporter.write_line(line + (f" | {detail}" if detail else ""))
