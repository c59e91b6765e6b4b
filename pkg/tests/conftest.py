import numpy as np
import pytest

from opecv.core import LoggedDataset, SoftmaxLinearPolicy
from opecv.banditgen import sample_actions


def random_problem(rng, n=40, m=3, d=2, beta0=1.0, beta1=3.0):
    """Logged data from a random softmax logging policy plus a random target."""
    x = rng.normal(size=(n, d))
    logging = SoftmaxLinearPolicy(rng.normal(size=(m, d)), beta0)
    target = SoftmaxLinearPolicy(rng.normal(size=(m, d)), beta1)
    pi0 = logging.probs(x)
    a = sample_actions(pi0, rng)
    r = (rng.random(n) < 0.3 + 0.4 * (a == 0)).astype(float)
    ds = LoggedDataset(x, a, r, pi0[np.arange(n), a], m)
    return ds, target, logging


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def problem(rng):
    return random_problem(rng, n=200, m=4, d=3)


_ACCEPTANCE: dict = {}


@pytest.fixture(scope="session")
def report():
    """Record one pass/fail line per acceptance criterion."""

    def record(number: int, title: str, passed: bool, detail: str) -> bool:
        _ACCEPTANCE[number] = f"[{'PASS' if passed else 'FAIL'}] {number} {title}: {detail}"
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_ACCEPTANCE):
        terminalreporter.write_line(_ACCEPTANCE[number])
