"""
Parameter containers.

A ParamSet is an ordered list of (layer_index, role, tensor) entries that
mirrors a model's layer layout.  A GradSet has the same layout rules and is
only tagged as holding gradients or updates.  Training tensors are float32
numpy arrays (the attacker re-casts to float64 for its own arithmetic);
entries are never mutated after construction.
"""

from dataclasses import dataclass

import numpy as np


WEIGHT = 'weight'
BIAS = 'bias'
ROLES = (WEIGHT, BIAS)


class LayoutError(ValueError):
    """Two parameter sets do not share the same layout."""


@dataclass(frozen=True)
class ParamEntry:
    layer_index: int
    role: str
    value: np.ndarray

    @property
    def name(self):
        return f'layer {self.layer_index} {self.role}'


class ParamSet:
    """Ordered, named collection of tensors."""

    kind = 'params'

    def __init__(self, entries=()):
        self.entries = tuple(entries)
        for e in self.entries:
            if e.role not in ROLES:
                raise LayoutError(f'{e.name}: unknown role {e.role!r}')

    @classmethod
    def from_arrays(cls, items):
        """Build from (layer_index, role, array) tuples."""
        return cls(ParamEntry(int(li), role, np.asarray(arr, dtype=np.float32))
                   for li, role, arr in items)

    def __len__(self):
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    def __getitem__(self, idx):
        return self.entries[idx]

    def __repr__(self):
        return f'{type(self).__name__}({", ".join(e.name for e in self.entries)})'

    def layout(self):
        return tuple((e.layer_index, e.role, tuple(e.value.shape)) for e in self.entries)

    def keys(self):
        return [(e.layer_index, e.role) for e in self.entries]

    def get(self, layer_index, role):
        for e in self.entries:
            if e.layer_index == layer_index and e.role == role:
                return e.value
        return None

    def num_elements(self):
        return int(sum(e.value.size for e in self.entries))

    def check_layout(self, other):
        if self.layout() != other.layout():
            mine, theirs = self.layout(), other.layout()
            for i, (a, b) in enumerate(zip(mine, theirs)):
                if a != b:
                    raise LayoutError(f'layout mismatch at entry {i}: {a} vs {b}')
            raise LayoutError(f'layout mismatch: {len(mine)} entries vs {len(theirs)}')

    def map(self, fn, cls=None):
        """Apply fn to every tensor, keeping the layout."""
        cls = cls or type(self)
        return cls(ParamEntry(e.layer_index, e.role, np.asarray(fn(e.value)))
                   for e in self.entries)

    def zip_map(self, other, fn, cls=None):
        self.check_layout(other)
        cls = cls or type(self)
        return cls(ParamEntry(a.layer_index, a.role, np.asarray(fn(a.value, b.value)))
                   for a, b in zip(self.entries, other.entries))

    def astype(self, dtype):
        return self.map(lambda v: v.astype(dtype))

    def flat(self):
        if not self.entries:
            return np.zeros(0, dtype=np.float32)
        return np.concatenate([e.value.ravel() for e in self.entries])

    def l2_norm(self):
        return float(np.sqrt(sum(float(np.sum(e.value.astype(np.float64) ** 2)) for e in self.entries)))

    def is_finite(self):
        return all(np.all(np.isfinite(e.value)) for e in self.entries)

    def equals(self, other):
        """Bit-identical comparison (layout and values)."""
        if self.layout() != other.layout():
            return False
        return all(np.array_equal(a.value, b.value) for a, b in zip(self.entries, other.entries))

    def as_grads(self):
        return GradSet(self.entries)

    def as_params(self):
        return ParamSet(self.entries)

    def to_dict(self):
        return [{'layer': e.layer_index, 'role': e.role, 'shape': list(e.value.shape)}
                for e in self.entries]


class GradSet(ParamSet):
    """ParamSet tagged as gradients or model updates."""

    kind = 'grads'


def zeros_like(params, cls=GradSet):
    return params.map(np.zeros_like, cls=cls)


@dataclass(frozen=True)
class Batch:
    """Minibatch: inputs with a leading batch dim, integer labels.

    ``soft_targets`` optionally replaces the one-hot encoding of ``labels``
    with a probability distribution per sample (shape batch x classes).
    """
    inputs: np.ndarray
    labels: np.ndarray
    soft_targets: np.ndarray = None

    def __post_init__(self):
        if self.inputs.ndim < 2:
            raise ValueError(f'batch inputs need a leading batch dim, got shape {self.inputs.shape}')
        if len(self.labels) != self.inputs.shape[0]:
            raise ValueError(f'{len(self.labels)} labels for {self.inputs.shape[0]} inputs')

    @classmethod
    def of(cls, inputs, labels, soft_targets=None, dtype=np.float32):
        inputs = np.asarray(inputs, dtype=dtype)
        labels = np.asarray(labels, dtype=np.int64).reshape(-1)
        if soft_targets is not None:
            soft_targets = np.asarray(soft_targets, dtype=dtype)
        return cls(inputs, labels, soft_targets)

    @property
    def size(self):
        return self.inputs.shape[0]

    def targets(self, classes):
        """Per-sample target distribution (batch x classes)."""
        if self.soft_targets is not None:
            return self.soft_targets
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= classes):
            raise ValueError(f'labels must lie in [0, {classes}), got '
                             f'[{self.labels.min()}, {self.labels.max()}]')
        onehot = np.zeros((self.size, classes), dtype=self.inputs.dtype)
        onehot[np.arange(self.size), self.labels] = 1
        return onehot

    def subset(self, index):
        soft = self.soft_targets[index] if self.soft_targets is not None else None
        return Batch(self.inputs[index], self.labels[index], soft)
