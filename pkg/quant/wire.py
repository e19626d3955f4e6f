"""
Binary wire format for QuantizedGradSets (little-endian).

    magic        4s   b'QGS1'
    version      u16  1
    tensor_count u32
    per tensor:
        layer_index u16
        role        u8   0=weight 1=bias
        bits        u8   8 | 16
        mode        u8   QuantMode id
        rank        u8
        dims        u32 x rank
        min_range   f32
        max_range   f32
        payload     elements x bits/8 bytes, signed two's-complement

Integrity of payload bytes is the transport's concern; every header field
is length- and value-checked on decode.
"""

import math
import struct

import numpy as np

from nn.params import BIAS, WEIGHT, ParamSet
from quant.codec import PAYLOAD_DTYPES, SUPPORTED_BITS, QuantMode, QuantizedTensor
from quant.gradset import QuantizedEntry, QuantizedGradSet, payload_bytes


MAGIC = b'QGS1'
VERSION = 1

_HEADER = struct.Struct('<4sHI')
_TENSOR = struct.Struct('<HBBBB')
_RANGE = struct.Struct('<ff')

ROLE_IDS = {WEIGHT: 0, BIAS: 1}
ROLE_NAMES = {v: k for k, v in ROLE_IDS.items()}
WIRE_DTYPES = {8: np.dtype('<i1'), 16: np.dtype('<i2')}


class WireFormatError(ValueError):
    """Malformed message; the text names the offset and the field."""


def encode(qg):
    """Serialize a QuantizedGradSet to bytes."""
    parts = [_HEADER.pack(MAGIC, VERSION, len(qg))]
    for e in qg:
        t = e.tensor
        if not 0 <= e.layer_index <= 0xFFFF:
            raise WireFormatError(f'{e.name}: layer_index does not fit u16')
        if len(t.shape) > 0xFF:
            raise WireFormatError(f'{e.name}: rank {len(t.shape)} does not fit u8')
        parts.append(_TENSOR.pack(e.layer_index, ROLE_IDS[e.role], t.bits, int(t.mode), len(t.shape)))
        parts.append(struct.pack(f'<{len(t.shape)}I', *t.shape))
        parts.append(_RANGE.pack(t.min_range, t.max_range))
        parts.append(np.ascontiguousarray(t.payload, dtype=WIRE_DTYPES[t.bits]).tobytes())
    return b''.join(parts)


class _Reader:
    def __init__(self, data):
        self.data = memoryview(data)
        self.offset = 0

    def take(self, n, field, what='truncated header'):
        if n < 0 or self.offset + n > len(self.data):
            raise WireFormatError(f'{what} at offset {self.offset}: field {field} needs {n} bytes, '
                                  f'{len(self.data) - self.offset} left')
        chunk = self.data[self.offset:self.offset + n]
        self.offset += n
        return chunk

    def unpack(self, fmt, field):
        return fmt.unpack(self.take(fmt.size, field))


def decode(data):
    """Parse bytes produced by encode(); raises WireFormatError."""
    r = _Reader(data)
    magic, version, count = r.unpack(_HEADER, 'header')
    if magic != MAGIC:
        raise WireFormatError(f'bad magic at offset 0: field magic is {bytes(magic)!r}, expected {MAGIC!r}')
    if version != VERSION:
        raise WireFormatError(f'bad version at offset 4: field version is {version}, expected {VERSION}')

    entries = []
    for i in range(count):
        start = r.offset
        layer_index, role_id, bits, mode_id, rank = r.unpack(_TENSOR, f'tensor[{i}].header')
        if role_id not in ROLE_NAMES:
            raise WireFormatError(f'bad role at offset {start + 2}: field tensor[{i}].role is {role_id}')
        if bits not in SUPPORTED_BITS:
            raise WireFormatError(f'bad bits at offset {start + 3}: field tensor[{i}].bits is {bits}')
        if mode_id not in {m.value for m in QuantMode}:
            raise WireFormatError(f'mode id out of range at offset {start + 4}: field tensor[{i}].mode is {mode_id}')
        dims = struct.unpack(f'<{rank}I', r.take(4 * rank, f'tensor[{i}].dims'))
        min_range, max_range = r.unpack(_RANGE, f'tensor[{i}].range')
        elements = math.prod(dims)
        raw = r.take(elements * bits // 8, f'tensor[{i}].payload', what='truncated payload')
        payload = np.frombuffer(raw, dtype=WIRE_DTYPES[bits]).astype(PAYLOAD_DTYPES[bits])
        tensor = QuantizedTensor(bits, QuantMode(mode_id), float(min_range), float(max_range),
                                 tuple(int(d) for d in dims), payload)
        entries.append(QuantizedEntry(int(layer_index), ROLE_NAMES[role_id], tensor))

    if r.offset != len(r.data):
        raise WireFormatError(f'trailing bytes at offset {r.offset}: {len(r.data) - r.offset} bytes after '
                              f'tensor[{count - 1}]')
    return QuantizedGradSet(entries)


def header_bytes(s):
    """Bytes of framing (message header plus per-tensor headers) for a set.

    Float sets are accounted with the same per-tensor framing.
    """
    total = _HEADER.size
    for e in s:
        shape = e.tensor.shape if hasattr(e, 'tensor') else e.value.shape
        total += _TENSOR.size + 4 * len(shape) + _RANGE.size
    return total


def message_bytes(s):
    """Full transmitted size: framing plus payload."""
    if isinstance(s, (QuantizedGradSet, ParamSet)):
        return header_bytes(s) + payload_bytes(s)
    raise WireFormatError(f'cannot size {type(s).__name__}')
