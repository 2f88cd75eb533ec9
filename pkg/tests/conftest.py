import numpy as np
import pytest

from dynlab.function_model import FunctionSpec


@pytest.fixture
def exp1():
    return FunctionSpec.scaled_exp(1.0)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
