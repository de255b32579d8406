import pytest

_CRITERIA = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n): acceptance criterion number n")


@pytest.fixture
def measured(request):
    """Dict whose items are printed next to the criterion's pass/fail line."""
    out = {}
    request.node.user_properties.append(("measured", out))
    return out


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    rep = (yield).get_result()
    mark = item.get_closest_marker("criterion")
    # one test per criterion: the call phase decides, a failed setup counts as a fail
    if mark is None or not (rep.when == "call" or (rep.when == "setup" and not rep.passed)):
        return
    detail = next((v for k, v in item.user_properties if k == "measured"), {})
    _CRITERIA[mark.args[0]] = (rep.passed, ", ".join(f"{k}={v}" for k, v in detail.items()))


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_CRITERIA):
        ok, detail = _CRITERIA[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}"
                                    + (f"  ({detail})" if detail else ""))
