import numpy as np
import pytest

from fasvit.data import generate_splits


@pytest.fixture(scope="session")
def tiny_splits():
    """Small seeded synthetic dataset shared by the slower tests."""
    return generate_splits(0, 12, 8, 8, image_size=32)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# --- acceptance reporting -------------------------------------------------------------------
_CRITERIA: dict[int, tuple[str, str]] = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    number, title = mark.args
    if rep.when == "call" or (rep.when == "setup" and rep.outcome != "passed"):
        _CRITERIA[number] = (title, "PASS" if rep.passed else "FAIL")


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        title, status = _CRITERIA[number]
        terminalreporter.write_line(f"criterion {number}: {status}  {title}")
