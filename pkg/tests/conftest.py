import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from lapse3d.synth import SynthParams, gen_tissue

settings.register_profile(
    "lapse3d", deadline=None, max_examples=60, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("lapse3d")


@pytest.fixture(scope="session")
def small_tissue():
    """64 x 64 x 32 clean tissue with 10 cells."""
    return gen_tissue(SynthParams(dims=(64, 64, 32), n_cells=10, seed=3))


@pytest.fixture(scope="session")
def tissue25():
    """Default 96^3 tissue with 25 cells."""
    return gen_tissue(SynthParams(n_cells=25, seed=25))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# one line per acceptance criterion, appended by tests/test_acceptance.py
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
