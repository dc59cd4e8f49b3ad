import pytest


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(name): acceptance criterion this test decides")
    config._criteria = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or rep.when != "call" and not rep.failed:
        return
    name = mark.args[0]
    detail = dict(item.user_properties).get("detail")
    ok, details = item.config._criteria.get(name, (True, []))
    if detail and detail not in details:
        details.append(detail)
    item.config._criteria[name] = (ok and rep.passed, details)


def pytest_terminal_summary(terminalreporter, config):
    crit = config._criteria
    if not crit:
        return
    terminalreporter.section("acceptance criteria")
    for name in sorted(crit):
        ok, details = crit[name]
        terminalreporter.write_line(f"{name} {'PASS' if ok else 'FAIL'}  {'; '.join(details)}")
