import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from lomap.diffusion import build_schedule
from lomap.synthworld import MazeSpec, generate_offline_dataset

settings.register_profile("default", max_examples=40, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

# acceptance lines collected by tests/test_acceptance.py and echoed in the summary
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def cosine20():
    return build_schedule(20)


@pytest.fixture(scope="session")
def linear20():
    return build_schedule(20, "linear", 1e-4, 0.4)


@pytest.fixture(scope="session")
def corridor():
    return MazeSpec.builtin("corridor")


@pytest.fixture(scope="session")
def four_room():
    return MazeSpec.builtin("four_room")


@pytest.fixture(scope="session")
def corridor_data(corridor):
    return generate_offline_dataset(corridor, 200, horizon=12, seed=3)
