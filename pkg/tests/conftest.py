import warnings

import numpy as np
import pytest
from hypothesis import settings

settings.register_profile("numerics", max_examples=1000, deadline=None)
settings.register_profile("default", max_examples=100, deadline=None)
settings.load_profile("default")

warnings.filterwarnings("ignore", module="cvxpy")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
