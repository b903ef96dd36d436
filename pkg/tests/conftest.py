import numpy as np
import pytest

from pidld import toy_mixture


@pytest.fixture
def toy():
    return toy_mixture()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
