"""Binary tensor container used to exchange arrays with external backends.

Layout (all integers little-endian)::

    b"MET3RT01"
    u32  array count
    per array:
        u16  name length, UTF-8 name
        u8   dtype code (0=f32, 1=f64, 2=u8)
        u8   ndim
        u64  dims[ndim]
        row-major little-endian payload
"""

from __future__ import annotations

import struct
from pathlib import Path
from typing import Mapping

import numpy as np

from .core import Met3rError

MAGIC = b"MET3RT01"

_CODES = {0: np.dtype("<f4"), 1: np.dtype("<f8"), 2: np.dtype("u1")}
_KINDS = {np.dtype("float32"): 0, np.dtype("float64"): 1, np.dtype("uint8"): 2}


class ContainerError(Met3rError):
    pass


def encode(arrays: Mapping[str, np.ndarray]) -> bytes:
    parts = [MAGIC, struct.pack("<I", len(arrays))]
    for name, arr in arrays.items():
        arr = np.asarray(arr)
        code = _KINDS.get(arr.dtype.newbyteorder("="))
        if code is None:
            raise ContainerError(f"array {name!r}: unsupported dtype {arr.dtype}")
        raw_name = name.encode("utf-8")
        parts.append(struct.pack("<H", len(raw_name)))
        parts.append(raw_name)
        parts.append(struct.pack("<BB", code, arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        parts.append(np.ascontiguousarray(arr, dtype=_CODES[code]).tobytes())
    return b"".join(parts)


def decode(buf: bytes) -> dict[str, np.ndarray]:
    if buf[:8] != MAGIC:
        raise ContainerError("bad magic; not a tensor container")
    try:
        (count,) = struct.unpack_from("<I", buf, 8)
        pos = 12
        out: dict[str, np.ndarray] = {}
        for _ in range(count):
            (nlen,) = struct.unpack_from("<H", buf, pos)
            pos += 2
            name = buf[pos : pos + nlen].decode("utf-8")
            pos += nlen
            code, ndim = struct.unpack_from("<BB", buf, pos)
            pos += 2
            dims = struct.unpack_from(f"<{ndim}Q", buf, pos)
            pos += 8 * ndim
            dtype = _CODES[code]
            nbytes = dtype.itemsize * int(np.prod(dims, dtype=np.int64))
            if pos + nbytes > len(buf):
                raise ContainerError(f"array {name!r} truncated")
            out[name] = np.frombuffer(buf, dtype=dtype, count=nbytes // dtype.itemsize,
                                      offset=pos).reshape(dims).copy()
            pos += nbytes
    except (struct.error, KeyError, UnicodeDecodeError) as exc:
        raise ContainerError(f"malformed container: {exc}") from exc
    return out


def write(path, arrays: Mapping[str, np.ndarray]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(encode(arrays))


def read(path) -> dict[str, np.ndarray]:
    return decode(Path(path).read_bytes())
