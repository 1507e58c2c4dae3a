"""Shared fixtures for the simulator tests."""

import pytest

from fedsense.sim_models import ConvergenceConfig, DatasetConfig, SimConfig, TopologyKind, TopologySpec


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False, help="run full-size simulations")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture
def tiny_config() -> SimConfig:
    """Line topology, small datasets and a loose convergence rule that fires within a few rounds."""
    return SimConfig(
        topology=TopologySpec(kind=TopologyKind.LINE),
        dataset=DatasetConfig(samples_per_sensor=40),
        convergence=ConvergenceConfig(epsilon=1.0, window=2),
        max_rounds=10,
        seed=7,
    )


@pytest.fixture
def star_config(tiny_config: SimConfig) -> SimConfig:
    return tiny_config.model_copy(update={"topology": TopologySpec(kind=TopologyKind.STAR)})
