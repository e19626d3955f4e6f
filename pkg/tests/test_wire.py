import struct

import numpy as np
import pytest

from nn.params import BIAS, WEIGHT, GradSet
from quant.gradset import QuantizedGradSet, dequantize_set, payload_bytes, quantize_set
from quant.policy import mixed_policy, uniform_policy
from quant.wire import WireFormatError, decode, encode, header_bytes, message_bytes


def single_tensor_message():
    g = GradSet.from_arrays([(0, WEIGHT, [-1.0, 0.5, 1.0])])
    return quantize_set(g, uniform_policy(g.keys(), 8))


def test_golden_bytes():
    data = encode(single_tensor_message())
    expected = (struct.pack('<4sHI', b'QGS1', 1, 1)
                + struct.pack('<HBBBB', 0, 0, 8, 0, 1)
                + struct.pack('<I', 3)
                + struct.pack('<ff', np.float32(-128 / 127), 1.0)
                + bytes([0x81, 0x40, 0x7F]))
    assert data == expected
    assert len(data) == 10 + 6 + 4 + 8 + 3


def test_round_trip_is_exact():
    rng = np.random.default_rng(3)
    g = GradSet.from_arrays([
        (0, WEIGHT, rng.normal(size=(4, 3, 2, 2))),
        (0, BIAS, rng.normal(size=4)),
        (2, WEIGHT, rng.normal(size=(5, 7))),
        (2, BIAS, np.zeros(5)),
    ])
    qg = quantize_set(g, mixed_policy(g.keys()))
    back = decode(encode(qg))
    assert back.same_as(qg)
    assert back.bits() == [8, 8, 16, 16]


def test_truncated_messages_name_offset():
    data = encode(single_tensor_message())
    with pytest.raises(WireFormatError, match='truncated header at offset 0'):
        decode(data[:6])
    with pytest.raises(WireFormatError, match='truncated header at offset 10'):
        decode(data[:12])
    with pytest.raises(WireFormatError, match='truncated payload at offset 28'):
        decode(data[:-1])


def test_oversized_dims_report_truncated_payload():
    data = (struct.pack('<4sHI', b'QGS1', 1, 1)
            + struct.pack('<HBBBB', 0, 0, 16, 0, 2)
            + struct.pack('<II', 0xFFFFFFFF, 0xFFFFFFFF)
            + struct.pack('<ff', -1.0, 1.0)
            + b'\x01\x02\x03')
    with pytest.raises(WireFormatError, match=r'truncated payload at offset 32: field tensor\[0\]\.payload'):
        decode(data)


def test_bad_header_fields():
    data = bytearray(encode(single_tensor_message()))
    bad = bytearray(data)
    bad[0:4] = b'QGS2'
    with pytest.raises(WireFormatError, match='bad magic'):
        decode(bytes(bad))
    bad = bytearray(data)
    bad[4] = 2
    with pytest.raises(WireFormatError, match='bad version'):
        decode(bytes(bad))
    bad = bytearray(data)
    bad[13] = 12
    with pytest.raises(WireFormatError, match='bad bits at offset 13'):
        decode(bytes(bad))
    bad = bytearray(data)
    bad[14] = 9
    with pytest.raises(WireFormatError, match='mode id out of range at offset 14'):
        decode(bytes(bad))
    bad = bytearray(data)
    bad[12] = 5
    with pytest.raises(WireFormatError, match='bad role'):
        decode(bytes(bad))


def test_trailing_bytes_rejected():
    data = encode(single_tensor_message())
    with pytest.raises(WireFormatError, match='trailing bytes at offset 31'):
        decode(data + b'\x00')


def test_header_bytes_formula():
    g = GradSet.from_arrays([(0, WEIGHT, np.zeros((2, 3))), (0, BIAS, np.zeros(2))])
    expected = 10 + (6 + 8 + 8) + (6 + 4 + 8)
    assert header_bytes(g) == expected
    qg = quantize_set(g, uniform_policy(g.keys(), 8))
    assert header_bytes(qg) == expected
    assert message_bytes(qg) == expected + 8
    assert message_bytes(g) == expected + 32
    assert len(encode(qg)) == message_bytes(qg)


def test_large_message_ratio():
    g = GradSet.from_arrays([(0, WEIGHT, np.linspace(-1, 1, 10000))])
    qg = quantize_set(g, uniform_policy(g.keys(), 8))
    assert payload_bytes(g) / payload_bytes(qg) == 4.0
    assert message_bytes(g) / len(encode(qg)) >= 3.8


def test_empty_set_is_header_only():
    data = encode(QuantizedGradSet())
    assert data == struct.pack('<4sHI', b'QGS1', 1, 0)
    assert len(decode(data)) == 0


def test_flipped_payload_byte_decodes_to_different_values():
    data = bytearray(encode(single_tensor_message()))
    data[-2] ^= 0x01
    changed = decode(bytes(data))
    assert changed[0].tensor.payload.tolist() == [-127, 65, 127]
    assert not dequantize_set(changed).equals(dequantize_set(single_tensor_message()))
