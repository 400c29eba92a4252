import numpy as np
import pytest

from aoii_harq import DecoderProfile, SourceChain

# the 4-state source used across the reference checks
REFERENCE_MATRIX = [
    [0.52, 0.12, 0.18, 0.18],
    [0.17, 0.57, 0.17, 0.09],
    [0.03, 0.06, 0.72, 0.19],
    [0.16, 0.10, 0.18, 0.56],
]


@pytest.fixture(scope="session")
def reference_chain():
    return SourceChain(REFERENCE_MATRIX)


@pytest.fixture(scope="session")
def reference_decoder():
    return DecoderProfile(p_e=0.5, c=0.5, r_max=2)


def symmetric_two_state(q: float) -> SourceChain:
    return SourceChain([[1.0 - q, q], [q, 1.0 - q]])


@pytest.fixture
def two_state():
    return symmetric_two_state


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
