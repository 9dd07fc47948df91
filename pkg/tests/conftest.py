import pytest

from rfasim.mesh import GeometryConfig, build_mesh

_CRITERIA = {}


@pytest.fixture(scope="session")
def coarse_elastic10():
    return build_mesh(GeometryConfig(mode="elastic", force=10.0, resolution="coarse"))


@pytest.fixture(scope="session")
def coarse_sharp40():
    return build_mesh(GeometryConfig(mode="sharp", force=40.0, resolution="coarse"))


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    # a failing fixture (setup) fails the criterion as well
    if rep.when == "call" or (rep.when == "setup" and not rep.passed):
        _CRITERIA[mark.args[0]] = ("PASS" if rep.passed else "FAIL", mark.args[1])


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_CRITERIA):
        status, text = _CRITERIA[n]
        terminalreporter.write_line(f"CRITERION {n}: {status}  {text}")
