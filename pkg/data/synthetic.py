"""
Seeded Gaussian-blob classification data.

Each class c has a centre drawn uniformly from [0.2, 0.8]^dim; samples are
centre + N(0, spread^2) noise, clipped to the [0, 1] pixel box.  When dim
is a perfect square the inputs are shaped (1, s, s) so that image models
and the PGM dumps see a square image; otherwise (dim,).
"""

import math

import numpy as np


def sample_shape(dim):
    side = math.isqrt(dim)
    if side * side == dim:
        return (1, side, side)
    return (dim,)


def _draw(rng, centres, n, spread):
    classes = len(centres)
    labels = rng.permutation(np.arange(n) % classes)
    noise = rng.normal(0.0, spread, size=(n, centres.shape[1]))
    x = np.clip(centres[labels] + noise, 0.0, 1.0)
    return x, labels


def make_blobs(classes=10, dim=64, n_train=400, n_test=100, seed=0, spread=0.15):
    """Returns (train_x, train_y, test_x, test_y); classes are balanced.

    Train and test samples come from separate draws of one generator, so
    the splits never share a sample.
    """
    if classes < 2:
        raise ValueError(f'need at least 2 classes, got {classes}')
    if dim < 1 or n_train < 1 or n_test < 1:
        raise ValueError(f'dim, n_train and n_test must be >= 1, got {dim}, {n_train}, {n_test}')
    if spread <= 0:
        raise ValueError(f'spread must be > 0, got {spread}')

    rng = np.random.default_rng(seed)
    centres = rng.uniform(0.2, 0.8, size=(classes, dim))
    train_x, train_y = _draw(rng, centres, n_train, spread)
    test_x, test_y = _draw(rng, centres, n_test, spread)

    shape = sample_shape(dim)
    return (train_x.astype(np.float32).reshape((n_train,) + shape), train_y.astype(np.int64),
            test_x.astype(np.float32).reshape((n_test,) + shape), test_y.astype(np.int64))
