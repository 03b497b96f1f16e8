import numpy as np
import pytest

from dynhbf.scenario import default_config, generate_comm_channels

# one line per acceptance criterion, filled in by test_acceptance.py
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def small_cfg():
    """12 transmit antennas, 2 users, 3 RF chains: cheap but non-trivial."""
    return default_config(n_tx=12, n_rx=2, n_users=2, n_rf=3, n_slots=4,
                          qos_thresholds=0.5)


@pytest.fixture
def small_channels(small_cfg):
    return generate_comm_channels(small_cfg, rng=7)


def crandn(rng, *shape):
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2)


def random_pd(rng, n, floor=0.1):
    a = crandn(rng, n, n)
    return a @ a.conj().T + floor * np.eye(n)
