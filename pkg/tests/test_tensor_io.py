import json
import struct

import numpy as np
import pytest
import torch
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from bevllm import tensor_io
from bevllm.errors import TensorFormatError

arrays = st.one_of(
    hnp.arrays(np.float32, hnp.array_shapes(min_dims=0, max_dims=3, max_side=5)),
    hnp.arrays(np.float64, hnp.array_shapes(min_dims=0, max_dims=3, max_side=5)),
    hnp.arrays(np.int32, hnp.array_shapes(min_dims=0, max_dims=3, max_side=5)),
)


@given(st.dictionaries(st.text(min_size=1, max_size=8), arrays, max_size=4))
def test_round_trip_is_bit_exact(tensors):
    loaded, meta = tensor_io.loads(tensor_io.dumps(tensors, {"k": 1}))
    assert meta == {"k": 1}
    assert sorted(loaded) == sorted(tensors)
    for name, arr in tensors.items():
        assert loaded[name].dtype == arr.dtype and loaded[name].shape == arr.shape
        assert loaded[name].tobytes() == arr.tobytes()


def test_torch_and_int64_inputs(tmp_path):
    path = tmp_path / "x.tns"
    tensor_io.save(path, {"w": torch.arange(6, dtype=torch.float32).reshape(2, 3), "ids": np.arange(4)})
    loaded, _ = tensor_io.load(path)
    assert loaded["ids"].dtype == np.int32
    assert np.array_equal(loaded["w"], np.arange(6, dtype=np.float32).reshape(2, 3))


def test_layout_is_little_endian_row_major():
    data = tensor_io.dumps({"a": np.array([[1, 2], [3, 4]], dtype=np.int32)})
    assert data[:8] == b"BEVTNS01"
    (hlen,) = struct.unpack("<Q", data[8:16])
    header = json.loads(data[16:16 + hlen])
    assert header["tensors"]["a"] == {"dtype": "i32", "shape": [2, 2], "offset": 0}
    assert data[16 + hlen:] == struct.pack("<4i", 1, 2, 3, 4)


def test_offsets_are_contiguous():
    data = tensor_io.dumps({"a": np.zeros(3, np.float32), "b": np.zeros(2, np.float64)})
    (hlen,) = struct.unpack("<Q", data[8:16])
    entries = json.loads(data[16:16 + hlen])["tensors"]
    assert entries["b"]["offset"] == 12
    assert len(data) - 16 - hlen == 12 + 16


def _rewrite(data, fn):
    (hlen,) = struct.unpack("<Q", data[8:16])
    header = json.loads(data[16:16 + hlen])
    fn(header)
    new = json.dumps(header).encode()
    return data[:8] + struct.pack("<Q", len(new)) + new + data[16 + hlen:]


@pytest.mark.parametrize("corrupt", [
    lambda d: b"NOTMAGIC" + d[8:],
    lambda d: d[:-1],
    lambda d: d + b"\0",
    lambda d: d[:8] + struct.pack("<Q", 10**9) + d[16:],
    lambda d: d[:16] + b"[" + d[17:],
    lambda d: _rewrite(d, lambda h: h["tensors"]["b"].update(offset=0)),
    lambda d: _rewrite(d, lambda h: h["tensors"]["a"].update(dtype="f16")),
])
def test_corruption_detected(corrupt):
    data = tensor_io.dumps({"a": np.zeros(2, np.float32), "b": np.ones(2, np.float32)})
    with pytest.raises(TensorFormatError):
        tensor_io.loads(corrupt(data))


def test_unsupported_dtype():
    with pytest.raises(TensorFormatError):
        tensor_io.dumps({"a": np.zeros(2, np.complex64)})
    with pytest.raises(TensorFormatError):
        tensor_io.dumps({"a": np.array([2**40])})
