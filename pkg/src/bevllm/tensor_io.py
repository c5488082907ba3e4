"""Minimal tensor container (``.tns``).

Layout::

    b"BEVTNS01"                       8-byte magic
    uint64 little-endian              header length in bytes
    header                            UTF-8 JSON, keys sorted
    payload                           row-major little-endian tensor data

The header maps ``"tensors"`` to ``{name: {"dtype", "shape", "offset"}}`` with
offsets relative to the payload start, plus a free-form ``"meta"`` object.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .errors import TensorFormatError

MAGIC = b"BEVTNS01"
DTYPES = {"f32": np.dtype("<f4"), "f64": np.dtype("<f8"), "i32": np.dtype("<i4")}
_CODES = {v: k for k, v in DTYPES.items()}



def _as_array(x) -> np.ndarray:
    if hasattr(x, "detach"):
        x = x.detach().cpu().numpy()
    arr = np.asarray(x)
    if arr.dtype.kind in "iub":
        info = np.iinfo(np.int32)
        if arr.size and (arr.max() > info.max or arr.min() < info.min):
            raise TensorFormatError("integer tensor does not fit in i32")
        code = "i32"
    elif arr.dtype.kind == "f" and arr.dtype.itemsize in (4, 8):
        code = "f32" if arr.dtype.itemsize == 4 else "f64"
    else:
        raise TensorFormatError(f"unsupported dtype {arr.dtype}; expected f32, f64 or i32")
    return np.require(arr.astype(DTYPES[code], copy=False), requirements="C")


def dumps(tensors: dict, meta: dict | None = None) -> bytes:
    entries = {}
    chunks = []
    offset = 0
    for name in tensors:
        arr = _as_array(tensors[name])
        entries[name] = {"dtype": _CODES[arr.dtype], "shape": list(arr.shape), "offset": offset}
        raw = arr.tobytes(order="C")
        chunks.append(raw)
        offset += len(raw)
    header = json.dumps({"meta": meta or {}, "tensors": entries}, sort_keys=True, separators=(",", ":")).encode()
    return MAGIC + struct.pack("<Q", len(header)) + header + b"".join(chunks)


def loads(data: bytes) -> tuple[dict[str, np.ndarray], dict]:
    if len(data) < 16 or data[:8] != MAGIC:
        raise TensorFormatError(f"bad magic {data[:8]!r}; not a tensor container")
    (hlen,) = struct.unpack("<Q", data[8:16])
    if 16 + hlen > len(data):
        raise TensorFormatError(f"header length {hlen} exceeds file size {len(data)}")
    try:
        header = json.loads(data[16:16 + hlen].decode())
        entries = header["tensors"]
    except (UnicodeDecodeError, json.JSONDecodeError, KeyError, TypeError) as exc:
        raise TensorFormatError(f"unreadable header: {exc}") from exc
    payload = memoryview(data)[16 + hlen:]
    expected = 0
    spans = []
    out = {}
    for name, e in entries.items():
        try:
            dtype = DTYPES[e["dtype"]]
            shape = tuple(int(s) for s in e["shape"])
            offset = int(e["offset"])
        except (KeyError, TypeError, ValueError) as exc:
            raise TensorFormatError(f"tensor {name!r}: bad header entry {e!r}") from exc
        nbytes = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize
        if offset < 0 or offset + nbytes > len(payload):
            raise TensorFormatError(
                f"tensor {name!r}: bytes [{offset}, {offset + nbytes}) exceed payload of {len(payload)}"
            )
        spans.append((offset, offset + nbytes, name))
        expected += nbytes
        out[name] = np.frombuffer(payload[offset:offset + nbytes], dtype=dtype).reshape(shape).copy()
    spans.sort()
    for (_, end, a), (start, _, b) in zip(spans, spans[1:]):
        if start < end:
            raise TensorFormatError(f"tensors {a!r} and {b!r} overlap")
    if expected != len(payload):
        raise TensorFormatError(f"payload is {len(payload)} bytes but tensors account for {expected}")
    return out, header.get("meta", {})


def save(path, tensors: dict, meta: dict | None = None) -> None:
    Path(path).write_bytes(dumps(tensors, meta))


def load(path) -> tuple[dict[str, np.ndarray], dict]:
    return loads(Path(path).read_bytes())
