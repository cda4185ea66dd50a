import numpy as np
import pytest

from lcool.rng import Rng
from lcool.score import train_dae
from lcool.toy_data import ToyDatasetSpec, generate_source, generate_target
from lcool.translate import train_cyclegan_toy

# Reference toy run: seeds and settings shared by the pipeline, CLI and
# acceptance tests. Changing them changes every trained model downstream.
TOY_SEED = 0
TOY_N = 1000
DAE_EPOCHS = 200
DAE_LR = 3e-3
GAN_STEPS = 5000


@pytest.fixture(scope="session")
def toy_source():
    return generate_source(ToyDatasetSpec(TOY_N, "source", TOY_SEED))


@pytest.fixture(scope="session")
def toy_target():
    return generate_target(ToyDatasetSpec(TOY_N, "target", TOY_SEED + 1))


@pytest.fixture(scope="session")
def toy_dae(toy_source):
    return train_dae(toy_source, 0.3**2, DAE_EPOCHS, DAE_LR, Rng(TOY_SEED))


@pytest.fixture(scope="session")
def toy_gan(toy_source, toy_target):
    return train_cyclegan_toy(toy_source, toy_target, GAN_STEPS, 1e-3, 10.0, Rng(TOY_SEED))


@pytest.fixture(scope="session")
def gaussian_samples():
    return Rng(11).normal(20_000).reshape(-1, 2)


@pytest.fixture(scope="session")
def gaussian_dae(gaussian_samples):
    """DAE fit to 10^4 draws from N(0, I2) with sigma = 0.3."""
    return train_dae(gaussian_samples, 0.09, 100, 3e-3, Rng(3))


@pytest.fixture(scope="session")
def grid_points():
    g = np.linspace(-2.0, 2.0, 21)
    return np.array([(a, b) for a in g for b in g])
