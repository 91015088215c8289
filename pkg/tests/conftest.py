import pytest
from hypothesis import HealthCheck, settings

from affgeom.atlas import builtin_manifold
from affgeom.connection import levi_civita

settings.register_profile(
    "fixed",
    derandomize=True,
    deadline=None,
    max_examples=40,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("fixed")

# filled by tests/test_acceptance.py, printed after the run
ACCEPTANCE_LINES = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for key in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[key])


@pytest.fixture(scope="session")
def torus():
    return builtin_manifold("flat_torus_2d")


@pytest.fixture(scope="session")
def sphere():
    return builtin_manifold("round_sphere_2d")


@pytest.fixture(scope="session")
def hopf():
    return builtin_manifold("hopf_torus_2d")


@pytest.fixture(scope="session")
def sphere_lc(sphere):
    return levi_civita(sphere.metric)
