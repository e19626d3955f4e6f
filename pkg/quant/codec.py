"""
Per-tensor quantization and dequantization.

Two modes map a float tensor onto a signed integer type of ``bits`` bits
(min_T = -2^(bits-1), max_T = 2^(bits-1) - 1):

SCALED
    A single scale factor chosen from the type bounds and the value range:

        min_sf = min_T / in_min  if min_T * in_min > 0 else MAX_FLOAT
        max_sf = max_T / in_max  if max_T * in_max > 0 else MAX_FLOAT
        s      = min(min_sf, max_sf)
        range  = (min_T / s, max_T / s)          # stored, adjusted range
        q      = round(clamp(x, range) * s)

    and back: x' = q * max(min_range / min_T, max_range / max_T).

MIN_COMBINED
    The affine map of [in_min, in_max] onto [min_T, max_T]; the stored
    range is the input range itself.

Rounding is round-half-to-even (``np.rint``).  Ranges are stored as
float32, and quantization uses the float32-rounded values so a tensor that
went over the wire dequantizes exactly like one that did not.
"""

from dataclasses import dataclass
from enum import IntEnum

import numpy as np


MAX_FLOAT = float(np.finfo(np.float32).max)
SUPPORTED_BITS = (8, 16)
PAYLOAD_DTYPES = {8: np.int8, 16: np.int16}


class QuantizationError(ValueError):
    """Invalid quantization input or corrupted quantized tensor."""


class QuantMode(IntEnum):
    SCALED = 0
    MIN_COMBINED = 1

    @classmethod
    def parse(cls, value):
        if isinstance(value, cls):
            return value
        if isinstance(value, str):
            key = value.strip().upper().replace('-', '_')
            if key in cls.__members__:
                return cls[key]
        else:
            try:
                return cls(int(value))
            except ValueError:
                pass
        raise QuantizationError(f'unknown quantization mode {value!r}')


def type_bounds(bits):
    if bits not in SUPPORTED_BITS:
        raise QuantizationError(f'unsupported bit width {bits}; expected one of {SUPPORTED_BITS}')
    return -(2 ** (bits - 1)), 2 ** (bits - 1) - 1


@dataclass(frozen=True)
class QuantizedTensor:
    bits: int
    mode: QuantMode
    min_range: float
    max_range: float
    shape: tuple
    payload: np.ndarray

    def __post_init__(self):
        if len(self.payload) != int(np.prod(self.shape, dtype=np.int64)):
            raise QuantizationError(f'payload length {len(self.payload)} does not match shape {self.shape}')

    @property
    def size(self):
        return int(self.payload.size)

    @property
    def payload_bytes(self):
        return self.size * self.bits // 8

    def check(self):
        """Validate type bounds and ranges; raises QuantizationError on corruption."""
        min_t, max_t = type_bounds(self.bits)
        if not (np.isfinite(self.min_range) and np.isfinite(self.max_range)):
            raise QuantizationError('corrupted tensor: non-finite range')
        if self.min_range > self.max_range:
            raise QuantizationError(f'corrupted tensor: min_range {self.min_range} > max_range {self.max_range}')
        if self.payload.size:
            lo, hi = int(self.payload.min()), int(self.payload.max())
            if lo < min_t or hi > max_t:
                raise QuantizationError(f'corrupted payload: values [{lo}, {hi}] outside int{self.bits} '
                                        f'bounds [{min_t}, {max_t}]')

    def same_as(self, other):
        return (self.bits == other.bits and self.mode == other.mode
                and self.min_range == other.min_range and self.max_range == other.max_range
                and tuple(self.shape) == tuple(other.shape)
                and np.array_equal(self.payload, other.payload))


def _f32(v):
    return float(np.float32(np.clip(v, -MAX_FLOAT, MAX_FLOAT)))


def scale_factor(bits, in_min, in_max):
    """SCALED-mode scale factor for the given input range."""
    min_t, max_t = type_bounds(bits)
    if in_min == 0 and in_max == 0:
        return 1.0
    min_sf = min_t / in_min if min_t * in_min > 0 else MAX_FLOAT
    max_sf = max_t / in_max if max_t * in_max > 0 else MAX_FLOAT
    return min(min_sf, max_sf)


def quantize(x, bits, mode, in_min=None, in_max=None):
    """Quantize a float tensor; in_min/in_max default to min(x)/max(x).

    Values outside the range are clamped.  Returns a QuantizedTensor whose
    stored range is the one dequantization must read.
    """
    mode = QuantMode.parse(mode)
    min_t, max_t = type_bounds(bits)
    x = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise QuantizationError('cannot quantize non-finite values')
    flat = x.ravel()
    if in_min is None:
        in_min = float(flat.min()) if flat.size else 0.0
    if in_max is None:
        in_max = float(flat.max()) if flat.size else 0.0
    if not (np.isfinite(in_min) and np.isfinite(in_max)):
        raise QuantizationError(f'non-finite input range ({in_min}, {in_max})')
    in_min, in_max = _f32(in_min), _f32(in_max)
    if in_min > in_max:
        raise QuantizationError(f'in_min {in_min} > in_max {in_max}')

    if mode == QuantMode.SCALED:
        s = scale_factor(bits, in_min, in_max)
        min_range, max_range = _f32(min_t / s), _f32(max_t / s)
        q = np.rint(np.clip(flat, min_range, max_range) * s)
    else:
        min_range, max_range = in_min, in_max
        width = in_max - in_min
        if width == 0:
            fill = 0 if in_min == 0 else min_t
            q = np.full(flat.shape, fill, dtype=np.float64)
        else:
            q = np.rint((np.clip(flat, in_min, in_max) - in_min) / width * (max_t - min_t)) + min_t

    payload = np.clip(q, min_t, max_t).astype(PAYLOAD_DTYPES[bits])
    return QuantizedTensor(bits, mode, min_range, max_range, tuple(int(d) for d in x.shape), payload)


def dequantize(q, mode=None, value_range=None):
    """Float32 tensor recovered from a QuantizedTensor.

    ``mode`` and ``value_range`` override the stored mode and range; a
    decoder that guesses the mode applies its own formula this way.
    """
    q.check()
    mode = q.mode if mode is None else QuantMode.parse(mode)
    min_range, max_range = (q.min_range, q.max_range) if value_range is None else value_range
    min_t, max_t = type_bounds(q.bits)
    v = q.payload.astype(np.float64)
    if mode == QuantMode.SCALED:
        s = max(min_range / min_t, max_range / max_t)
        out = v * s
    else:
        out = (v - min_t) * (max_range - min_range) / (max_t - min_t) + min_range
    return np.clip(out, -MAX_FLOAT, MAX_FLOAT).astype(np.float32).reshape(q.shape)


def round_trip_bound(bits, r):
    """Max abs SCALED round-trip error for a symmetric range r = max|x|."""
    _, max_t = type_bounds(bits)
    return r / max_t * 0.5 + 4 * float(np.finfo(np.float32).eps) * r
