import numpy as np
import pytest

from kfat.simulate import ScenarioConfig
from kfat.sysmodel import NoiseIntensities, tracking_1d, tracking_2d

TRUTH_1D = NoiseIntensities([1.0], [0.1])
TRUTH_2D = NoiseIntensities([1.0, 2.0], [0.2, 0.1])


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def model_1d():
    return tracking_1d()


@pytest.fixture
def model_2d():
    return tracking_2d()


@pytest.fixture
def scenario_1d(model_1d):
    return ScenarioConfig(model_1d, TRUTH_1D, TRUTH_1D, dt=0.1, steps=200, runs=50, master_seed=7)


def random_spd(rng, n, scale=1.0):
    A = rng.standard_normal((n, n))
    return scale * (A @ A.T + n * np.eye(n))
