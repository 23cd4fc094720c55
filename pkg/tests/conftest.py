import numpy as np
import pytest

from gausshead.deskrig import make_desk_rig


@pytest.fixture(scope="session")
def desk_rig():
    return make_desk_rig()


@pytest.fixture()
def rng():
    return np.random.default_rng(1234)
