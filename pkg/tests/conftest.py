import pytest

_CRITERIA = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n): acceptance criterion number")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None or (report.when != "call" and report.passed):
        return
    number = marker.args[0]
    detail = dict(item.user_properties).get("detail", "")
    if report.failed:
        _CRITERIA[number] = ("FAIL", detail or str(report.longrepr).splitlines()[-1])
    elif report.when == "call" and _CRITERIA.get(number, ("PASS",))[0] != "FAIL":
        _CRITERIA[number] = ("PASS", detail)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        status, detail = _CRITERIA[number]
        terminalreporter.write_line(f"criterion {number:2d}: {status}  {detail}")
