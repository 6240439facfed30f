import numpy as np
import pytest

from agd.encoder import build_encoder
from agd.schedule import build_linear_schedule
from agd.score import default_world
from agd.victim import PrototypeBank


@pytest.fixture(scope="session")
def schedule():
    return build_linear_schedule()


@pytest.fixture(scope="session")
def world():
    return default_world()


@pytest.fixture(scope="session")
def eps_model(world, schedule):
    return world.eps_model(schedule)


@pytest.fixture(scope="session")
def enc(world):
    return build_encoder(prototypes=world.prototypes)


@pytest.fixture(scope="session")
def bank(world, enc):
    return PrototypeBank.from_world(world, enc)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
