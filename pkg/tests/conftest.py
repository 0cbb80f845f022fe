import numpy as np
import pytest

from qtrack.systems import benchmark_problem


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def bench():
    model, rho, theta = benchmark_problem()
    return model, rho, theta


def pytest_terminal_summary(terminalreporter):
    from tests import test_acceptance

    ran = any("test_acceptance" in getattr(rep, "nodeid", "")
              for reports in terminalreporter.stats.values() for rep in reports)
    if not ran:
        return
    terminalreporter.section("acceptance criteria")
    for key in range(1, 12):
        line = test_acceptance.RESULTS.get(key)
        terminalreporter.write_line(line or f"[FAIL] {key:>2} did not complete")
