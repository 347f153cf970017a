import numpy as np
import pytest

from sparserec.operators import DenseOperator

_criteria = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, title): acceptance criterion number and title")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    if rep.when == "call" or (rep.when == "setup" and not rep.passed):
        detail = dict(item.user_properties).get("detail", "")
        _criteria[mark.args[0]] = (mark.args[1], rep.outcome, detail)


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_criteria):
        title, outcome, detail = _criteria[n]
        status = "PASS" if outcome == "passed" else "FAIL"
        terminalreporter.write_line(f"[{status}] criterion {n}: {title}" + (f" | {detail}" if detail else ""))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def unit_gaussian(rng, rows, cols):
    A = rng.standard_normal((rows, cols))
    return DenseOperator(A / np.linalg.norm(A, axis=0), normalized=True)


def signed_permutation(rng, n):
    P = np.zeros((n, n))
    P[np.arange(n), rng.permutation(n)] = rng.choice([-1.0, 1.0], size=n)
    return DenseOperator(P, normalized=True)
