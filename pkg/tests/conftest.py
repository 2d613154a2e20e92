import numpy as np
import pytest

from lieobserver.config import load_preset
from lieobserver.simulate import run


@pytest.fixture(scope="session")
def noiseless_config():
    return load_preset("se3-figure1-noiseless")


@pytest.fixture(scope="session")
def noiseless_run(noiseless_config):
    return run(noiseless_config.scenario)


@pytest.fixture(scope="session")
def noisy_run():
    return run(load_preset("se3-figure1").scenario)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
