import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "default", max_examples=40, deadline=None, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture(scope="session")
def small_darcy():
    from framenet.darcy import make_darcy_problem

    return make_darcy_problem(n_per_dim=16, n_in=5, n_out=5)


_CRITERIA: list = []


def pytest_runtest_logreport(report):
    if report.when != "call":
        return
    names = [v for k, v in report.user_properties if k == "criterion"]
    if names:
        _CRITERIA.append(("PASS" if report.passed else "FAIL", names[0]))


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.section("acceptance criteria")
        for status, name in _CRITERIA:
            terminalreporter.write_line(f"{status} {name}")
