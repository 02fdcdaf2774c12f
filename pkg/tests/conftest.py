import pytest

_outcomes: dict[str, str] = {}
_order: list[str] = []


def _criterion(item):
    mark = item.get_closest_marker("criterion")
    return mark.args[0] if mark else None


def pytest_collection_modifyitems(items):
    for item in items:
        name = _criterion(item)
        if name and name not in _order:
            _order.append(name)


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    name = _criterion(item)
    if name is None:
        return
    if report.when == "call" or report.failed or report.skipped:
        prev = _outcomes.get(name)
        if report.failed:
            _outcomes[name] = "FAIL"
        elif report.skipped and prev is None:
            _outcomes[name] = "SKIP"
        elif prev is None:
            _outcomes[name] = "PASS"


def pytest_terminal_summary(terminalreporter):
    if not _outcomes:
        return
    terminalreporter.section("acceptance criteria")
    for name in _order:
        if name in _outcomes:
            terminalreporter.write_line(f"{_outcomes[name]}  {name}")
