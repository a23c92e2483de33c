import numpy as np
import pytest

from basin import generate_dataset
from helpers import small_swing_spec
from reservoir import Hyperparams, MatrixSeeds, train_machine


@pytest.fixture(scope="session")
def swing_dataset():
    return generate_dataset(small_swing_spec())


@pytest.fixture
def small_hp():
    return Hyperparams(p=0.5, spectral_radius=0.5, sigma=1.0, alpha_leak=0.6, eta=1e-4, n=40, d=2)


@pytest.fixture
def reference_hp():
    return Hyperparams(p=0.480, spectral_radius=0.033, sigma=2.917, alpha_leak=0.574, eta=3.458e-4, n=100, d=2)


@pytest.fixture(scope="session")
def small_machine(swing_dataset):
    hp = Hyperparams(p=0.5, spectral_radius=0.5, sigma=1.0, alpha_leak=0.6, eta=1e-4, n=40, d=2)
    return train_machine(hp, MatrixSeeds.derive(11, 0), swing_dataset.training, 10, 10.0,
                         normalizer=swing_dataset.normalizer)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
