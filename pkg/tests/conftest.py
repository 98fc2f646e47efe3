import numpy as np
import pytest

from hinas.autodiff import precision


@pytest.fixture
def f64():
    with precision("float64"):
        yield


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
