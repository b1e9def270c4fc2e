import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "repo",
    deadline=None,
    derandomize=True,
    suppress_health_check=[HealthCheck.too_slow, HealthCheck.data_too_large],
)
settings.load_profile("repo")


@pytest.fixture(scope="session")
def catalog():
    from demo2plan.sim import default_catalog

    return default_catalog()


@pytest.fixture(scope="session")
def noisy_episode(catalog):
    from demo2plan.sim import NoiseModel, scene_for, simulate_demo

    return simulate_demo(scene_for(catalog, 1, 7), 7, NoiseModel())


@pytest.fixture(scope="session")
def clean_episode(catalog):
    from demo2plan.sim import NoiseModel, scene_for, simulate_demo

    return simulate_demo(scene_for(catalog, 2, 11), 11, NoiseModel.noiseless())


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
