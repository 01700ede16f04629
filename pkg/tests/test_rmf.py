import struct
import zlib

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from metspace.errors import ChecksumMismatch, FormatError
from metspace.fields import GridChart, MetricField, ScalarField, random_ell_field, random_metric_field
from metspace.rmf import decode, encode, read_field, write_field


def _same(a, b):
    assert type(a) is type(b)
    assert a.chart == b.chart
    np.testing.assert_array_equal(a.values, b.values)
    np.testing.assert_array_equal(a.singular_mask, b.singular_mask)


@given(
    st.integers(1, 3),
    st.integers(2, 5),
    st.floats(1e-3, 10),
    st.floats(-5, 5),
    st.booleans(),
    st.integers(0, 2**31),
)
def test_metric_roundtrip_bitwise(dim, n, h, o, per, seed):
    c = GridChart((o,) * dim, (h,) * dim, (n,) * dim, (per,) + (False,) * (dim - 1))
    g = random_metric_field(c, np.random.default_rng(seed), label="a b/ü=1")
    back = decode(encode(g))
    _same(g, back)
    assert back.label == g.label


def test_ell_scalar_and_mask_roundtrip(tmp_path, rng):
    c = GridChart.box([0, 0], [1, 2], (4, 6))
    b = random_ell_field(c, rng)
    _same(b, decode(encode(b)))
    s = ScalarField(c, rng.normal(size=24), np.arange(24) % 7 == 0)
    _same(s, decode(encode(s)))
    v = np.broadcast_to(np.eye(2), (24, 2, 2)).copy()
    v[3] = np.nan
    g = MetricField(c, v, np.arange(24) == 3, max_singular_fraction=0.1)
    path = tmp_path / "g.rmf"
    write_field(g, path)
    back = read_field(path)
    _same(g, back)


def test_header_is_text_and_payload_little_endian(rng):
    c = GridChart.box([0], [1], (3,))
    g = MetricField(c, np.array([1.0, 2.0, 3.0]).reshape(3, 1, 1))
    data = encode(g)
    header, _, rest = data.partition(b"\n")
    assert header.startswith(b"RMF1 dim=1 shape=3 ")
    assert b"kind=metric" in header
    assert struct.unpack("<3d", rest[:24]) == (1.0, 2.0, 3.0)
    assert rest[24:27] == b"\x00\x00\x00"
    assert struct.unpack("<I", rest[27:])[0] == zlib.crc32(rest[:27])


def test_corruption_detected(rng):
    c = GridChart.box([0, 0], [1, 1], (3, 3))
    data = bytearray(encode(random_metric_field(c, rng)))
    data[-10] ^= 1
    with pytest.raises(ChecksumMismatch):
        decode(bytes(data))


@pytest.mark.parametrize(
    "mutate",
    [
        lambda d: b"RMF2" + d[4:],
        lambda d: d[:-1],
        lambda d: d + b"\x00",
        lambda d: d.replace(b"kind=metric", b"kind=tensor"),
        lambda d: d.replace(b"dim=2", b"dim=x"),
        lambda d: d.split(b"\n", 1)[1],
    ],
)
def test_malformed_input_reports_offset(rng, mutate):
    c = GridChart.box([0, 0], [1, 1], (3, 3))
    data = encode(random_metric_field(c, rng))
    with pytest.raises(FormatError) as info:
        decode(mutate(data))
    assert info.value.offset is not None
    assert 0 <= info.value.offset <= len(data) + 1
