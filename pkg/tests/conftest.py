import pytest

_outcomes: dict = {}
_titles: dict = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion a test belongs to")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    number, title = mark.args
    _titles[number] = title
    if rep.when == "call" or rep.outcome != "passed":
        _outcomes.setdefault(number, []).append(rep.outcome)


def pytest_terminal_summary(terminalreporter):
    if not _outcomes:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_outcomes):
        res = _outcomes[number]
        if "failed" in res:
            status = "FAIL"
        elif all(r == "skipped" for r in res):
            status = "SKIP"
        else:
            status = "PASS"
        note = f"{res.count('passed')}/{len(res)} checks passed"
        if res.count("skipped"):
            note += f", {res.count('skipped')} skipped"
        terminalreporter.write_line(f"criterion {number}: {status}  {_titles[number]}  ({note})")
