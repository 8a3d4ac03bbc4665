import pytest

from oehnn.data import GenerationProtocol, generate
from oehnn.dynamics import duffing_system
from oehnn.signals import NoiseSpec


# Small protocol for fast contract tests: short pre-roll, few realizations.
TINY_PROTOCOL = GenerationProtocol(
    n_realizations=6,
    n_samples=40,
    ts=0.01,
    t_start=0.5,
    split=(3, 2, 1),
    amplitude=0.15,
)


@pytest.fixture(scope="session")
def tiny_duffing_dataset():
    return generate(duffing_system(), TINY_PROTOCOL, NoiseSpec(variance=0.1), master_seed=42)


@pytest.fixture(scope="session")
def standard_duffing_dataset():
    """The full default single-mass recording protocol."""
    return generate(duffing_system(), GenerationProtocol(), NoiseSpec(variance=0.1), master_seed=0)
