"""Split a training set into disjoint client shards."""

import numpy as np


def iid_partition(n, num_clients, rng):
    """Shuffle then cut into num_clients near-equal shards (equal when divisible)."""
    if num_clients < 1:
        raise ValueError(f'need at least one client, got {num_clients}')
    if n < num_clients:
        raise ValueError(f'{n} samples cannot give {num_clients} clients one sample each')
    return [np.sort(s) for s in np.array_split(rng.permutation(n), num_clients)]


def dirichlet_partition(labels, num_clients, alpha, rng):
    """Label-skewed shards: each class is split by a Dirichlet(alpha) draw.

    Smaller alpha means more skew.  Every client ends up with at least one
    sample; a client left empty takes one from the largest shard.
    """
    labels = np.asarray(labels)
    if alpha <= 0:
        raise ValueError(f'dirichlet alpha must be > 0, got {alpha}')
    if len(labels) < num_clients:
        raise ValueError(f'{len(labels)} samples cannot give {num_clients} clients one sample each')

    shards = [[] for _ in range(num_clients)]
    for c in np.unique(labels):
        idx = rng.permutation(np.flatnonzero(labels == c))
        p = rng.dirichlet(np.full(num_clients, float(alpha)))
        cuts = (np.cumsum(p)[:-1] * len(idx)).astype(int)
        for k, part in enumerate(np.split(idx, cuts)):
            shards[k].extend(part.tolist())

    for k in range(num_clients):
        if not shards[k]:
            donor = max(range(num_clients), key=lambda j: len(shards[j]))
            shards[k].append(shards[donor].pop())
    return [np.sort(np.asarray(s, dtype=np.int64)) for s in shards]


PARTITIONERS = ('iid', 'dirichlet')


def partition(labels, num_clients, scheme, rng, alpha=0.5):
    if scheme == 'iid':
        return iid_partition(len(labels), num_clients, rng)
    if scheme == 'dirichlet':
        return dirichlet_partition(labels, num_clients, alpha, rng)
    raise ValueError(f'unknown partition scheme {scheme!r}; choose one of {PARTITIONERS}')
