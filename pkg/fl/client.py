"""Client side of a round: local SGD from the global parameters."""

from dataclasses import dataclass

import numpy as np

from nn.backprop import backward, sgd_step
from nn.params import Batch, GradSet


@dataclass(frozen=True)
class ClientState:
    client_id: int
    data: Batch
    seed: int = 0

    def __post_init__(self):
        if self.data.size < 1:
            raise ValueError(f'client {self.client_id} has an empty dataset')

    @property
    def size(self):
        return self.data.size

    def rng(self, round_index):
        """RNG stream for one (seed, client, round)."""
        return np.random.default_rng([self.seed, self.client_id, round_index])


def local_training(spec, client, global_params, config, rng=None):
    """E epochs of shuffled minibatch SGD; returns params_after - params_before.

    ``rng`` defaults to the client's stream for round 0.
    """
    if client.data.size < 1:
        raise ValueError(f'client {client.client_id} has an empty dataset')
    rng = rng if rng is not None else client.rng(0)
    params = global_params
    n = client.data.size
    for _ in range(config.local_epochs):
        order = rng.permutation(n)
        for start in range(0, n, config.batch_size):
            batch = client.data.subset(order[start:start + config.batch_size])
            params = sgd_step(params, backward(spec, params, batch), config.learning_rate)
    return params.zip_map(global_params, lambda after, before: after - before, cls=GradSet)
