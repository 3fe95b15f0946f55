import time

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from deeprandom.core import ProtocolParams

settings.register_profile(
    "repo", deadline=None, max_examples=60, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("repo")

# small configuration for many-session runs: t and H_s as in the defaults,
# single-round codewords and no message budget keep a session at 128 rounds
RELAY = dict(n=16, k=16.0, K=3.0, L=1, L_M=0, assumed_accept=1.0)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def relay_params():
    return ProtocolParams(**RELAY)


@pytest.fixture(scope="session")
def default_params():
    return ProtocolParams()

# bits are balanced here, unlike the defaults where the comb is wider than
# the whole range of V_B; used for the invariants that need a non-constant bit
BALANCED = dict(n=256, k=4.0, K=1.5)


@pytest.fixture(scope="session")
def default_rounds_timed(default_params):
    from deeprandom.rounds import simulate_rounds

    start = time.perf_counter()
    rounds = simulate_rounds(default_params, 10_000, seed=2024)
    return rounds, time.perf_counter() - start


@pytest.fixture(scope="session")
def default_rounds(default_rounds_timed):
    return default_rounds_timed[0]


@pytest.fixture(scope="session")
def balanced_rounds():
    from deeprandom.rounds import simulate_rounds

    return simulate_rounds(ProtocolParams(**BALANCED), 10_000, seed=77)


# one line per acceptance criterion, collected by tests/test_acceptance.py
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda l: int(l.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
