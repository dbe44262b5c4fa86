import numpy as np
import pytest

from tallbms.glm import Dataset, Family

_CRITERIA = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion")
    config.addinivalue_line("markers", "slow: long-running check")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    num, title = mark.args
    if rep.when == "call" or (rep.when == "setup" and not rep.passed):
        status = "PASS" if rep.passed else ("SKIP" if rep.skipped else "FAIL")
        prev = _CRITERIA.get(num)
        # A criterion with several test functions fails if any of them fails.
        if prev is None or prev[1] == "PASS" or status == "FAIL":
            _CRITERIA[num] = (title, status)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(_CRITERIA):
        title, status = _CRITERIA[num]
        terminalreporter.write_line(f"criterion {num:2d} {status}: {title}")


def make_dataset(rng, n, m, family, scale=1.0):
    """Random full-rank design with intercept and a response drawn from the model."""
    x = np.column_stack([np.ones(n), rng.standard_normal((n, m - 1))])
    beta = rng.normal(scale=scale, size=m)
    eta = x @ beta
    if Family.parse(family) is Family.GAUSSIAN:
        y = eta + rng.standard_normal(n)
    else:
        y = (rng.random(n) < 1 / (1 + np.exp(-eta))).astype(float)
    return Dataset(x, y, family)


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


@pytest.fixture(scope="session")
def logistic_p5():
    """n = 10,000 logistic data with 5 candidate covariates, two active."""
    r = np.random.default_rng(3)
    n = 10_000
    cov = r.standard_normal((n, 5))
    cov[:, 3] = 0.6 * cov[:, 0] + 0.8 * cov[:, 3]
    eta = -0.3 + 0.5 * cov[:, 0] - 0.4 * cov[:, 2] + 0.05 * cov[:, 4]
    y = (r.random(n) < 1 / (1 + np.exp(-eta))).astype(float)
    return Dataset.from_covariates(cov, y, "binomial")
