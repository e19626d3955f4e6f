"""
Set-level codec: quantize every tensor of a GradSet under a policy, plus
payload accounting and the attacker's search-space size.
"""

from dataclasses import dataclass

import numpy as np

from nn.params import GradSet, LayoutError, ParamEntry, ParamSet
from quant.codec import dequantize, quantize


@dataclass(frozen=True)
class QuantizedEntry:
    layer_index: int
    role: str
    tensor: object  # QuantizedTensor

    @property
    def name(self):
        return f'layer {self.layer_index} {self.role}'


class QuantizedGradSet:
    """Ordered (layer_index, role, QuantizedTensor) entries mirroring a GradSet."""

    def __init__(self, entries=()):
        self.entries = tuple(entries)

    def __len__(self):
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    def __getitem__(self, idx):
        return self.entries[idx]

    def keys(self):
        return [(e.layer_index, e.role) for e in self.entries]

    def layout(self):
        return tuple((e.layer_index, e.role, tuple(e.tensor.shape)) for e in self.entries)

    def bits(self):
        return [e.tensor.bits for e in self.entries]

    def same_as(self, other):
        if self.keys() != other.keys():
            return False
        return all(a.tensor.same_as(b.tensor) for a, b in zip(self.entries, other.entries))


def quantize_set(g, policy):
    """Quantize each tensor with its own (min, max) as the input range."""
    entries = []
    for e in g:
        rule = policy.lookup(e.layer_index, e.role)
        entries.append(QuantizedEntry(e.layer_index, e.role, quantize(e.value, rule.bits, rule.mode)))
    return QuantizedGradSet(entries)


def dequantize_set(qg, mode_override=None, ranges=None):
    """Element-wise inverse of quantize_set.

    ``mode_override`` maps (layer_index, role) -> mode to decode with a
    different formula; ``ranges`` maps the same keys to the float range
    that formula reads.  Both default to what each tensor stored.
    """
    entries = []
    for e in qg:
        key = (e.layer_index, e.role)
        mode = (mode_override or {}).get(key)
        value_range = (ranges or {}).get(key)
        entries.append(ParamEntry(e.layer_index, e.role, dequantize(e.tensor, mode, value_range)))
    return GradSet(entries)


def payloads_as_floats(qg):
    """Raw integer payloads reinterpreted as floats, ranges discarded."""
    return GradSet(ParamEntry(e.layer_index, e.role,
                              e.tensor.payload.astype(np.float32).reshape(e.tensor.shape))
                   for e in qg)


def payload_bytes(s):
    """Payload size in bytes, headers excluded.

    float sets count 4 bytes per element; quantized sets count bits/8.
    """
    if isinstance(s, QuantizedGradSet):
        return int(sum(e.tensor.payload_bytes for e in s))
    if isinstance(s, ParamSet):
        return 4 * s.num_elements()
    raise LayoutError(f'cannot count payload of {type(s).__name__}')


def attack_search_space(modes, layers):
    """m^L decoding combinations an attacker must try; exact integer."""
    modes, layers = int(modes), int(layers)
    if modes < 1 or layers < 1:
        raise ValueError(f'need modes >= 1 and layers >= 1, got m={modes}, L={layers}')
    return modes ** layers
