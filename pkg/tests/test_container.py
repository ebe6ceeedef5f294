import struct

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra import numpy as hnp

from met3r import container


def test_layout_matches_format():
    buf = container.encode({"ab": np.array([[1, 2, 3]], dtype=np.uint8)})
    expected = (
        b"MET3RT01" + struct.pack("<I", 1) + struct.pack("<H", 2) + b"ab"
        + bytes([2, 2]) + struct.pack("<2Q", 1, 3) + bytes([1, 2, 3])
    )
    assert buf == expected


def test_float_payload_little_endian():
    buf = container.encode({"x": np.array([1.0], dtype=">f8")})
    assert buf[-8:] == struct.pack("<d", 1.0)
    assert buf[-8 - 8 - 2 - 1] == ord("x")


@settings(max_examples=50)
@given(
    hnp.arrays(
        dtype=st.sampled_from([np.float32, np.float64, np.uint8]),
        shape=hnp.array_shapes(min_dims=0, max_dims=4, min_side=0, max_side=5),
    ),
    st.text(min_size=1, max_size=12),
)
def test_roundtrip_bit_exact(arr, name):
    out = container.decode(container.encode({name: arr}))
    assert out[name].dtype == arr.dtype.newbyteorder("<")
    assert out[name].shape == arr.shape
    assert out[name].tobytes() == np.ascontiguousarray(arr).tobytes()


def test_file_roundtrip(tmp_path):
    arrays = {"x1": np.random.default_rng(0).random((4, 5, 3)), "c1": np.ones((4, 5), np.float32)}
    container.write(tmp_path / "a" / "b.m3t", arrays)
    back = container.read(tmp_path / "a" / "b.m3t")
    assert list(back) == ["x1", "c1"]
    for k in arrays:
        assert np.array_equal(back[k], arrays[k])


def test_bad_magic():
    with pytest.raises(container.ContainerError):
        container.decode(b"NOTMET3R\x00\x00\x00\x00")


def test_truncated():
    buf = container.encode({"x": np.zeros(10)})
    with pytest.raises(container.ContainerError):
        container.decode(buf[:-4])


def test_unsupported_dtype():
    with pytest.raises(container.ContainerError):
        container.encode({"x": np.zeros(3, dtype=np.int32)})
