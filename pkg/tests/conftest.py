import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from data.loader import load_dataset  # noqa: E402
from nn.layers import Activation, Conv2D, Dense, Flatten, MaxPool2D  # noqa: E402
from nn.model import ModelSpec, mlp_tiny  # noqa: E402
from nn.params import Batch  # noqa: E402


@pytest.fixture
def tiny_spec():
    """flatten - dense(9->5) - relu - dense(5->3), 68 parameters."""
    return mlp_tiny(input_shape=(1, 3, 3), classes=3, hidden=5)


@pytest.fixture
def conv_spec():
    """conv - tanh - maxpool - flatten - dense on 6x6 inputs, 47 parameters."""
    return ModelSpec(
        layers=(Conv2D(1, 2, 3), Activation('tanh'), MaxPool2D(2), Flatten(), Dense(8, 3)),
        input_shape=(1, 6, 6),
        classes=3,
        name='conv-tiny',
    )


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def random_batch(rng, spec, size=2, dtype=np.float64):
    x = rng.uniform(0.0, 1.0, size=(size,) + spec.input_shape)
    y = rng.integers(0, spec.classes, size=size)
    return Batch.of(x, y, dtype=dtype)


@pytest.fixture
def small_dataset():
    return load_dataset('synthetic', classes=3, dim=16, n=48, n_test=24, seed=5)
