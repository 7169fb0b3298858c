"""Little-endian binary container for named arrays.

Layout (all integers little-endian)::

    magic      4 bytes  b"TDMC"
    version    uint16   (currently 1)
    meta_len   uint32   length of the UTF-8 JSON metadata blob
    meta       bytes    JSON object (architecture descriptor, fps, ...)
    count      uint32   number of arrays
    per array:
        name_len uint16, name (UTF-8)
        dtype    uint8   1 = float32, 2 = float64, 3 = int64, 4 = uint8
        ndim     uint8
        dims     ndim x uint64
        data     raw little-endian values, C order
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"TDMC"
VERSION = 1
_CODES = {1: np.dtype("<f4"), 2: np.dtype("<f8"), 3: np.dtype("<i8"), 4: np.dtype("u1")}


class ContainerError(ValueError):
    pass


def _code(arr: np.ndarray) -> int:
    for code, dt in _CODES.items():
        if arr.dtype.kind == dt.kind and arr.dtype.itemsize == dt.itemsize:
            return code
    raise ContainerError(f"unsupported dtype {arr.dtype}")


def dumps(arrays: dict[str, np.ndarray], meta: dict | None = None) -> bytes:
    meta_blob = json.dumps(meta or {}, sort_keys=True).encode()
    parts = [MAGIC, struct.pack("<HI", VERSION, len(meta_blob)), meta_blob,
             struct.pack("<I", len(arrays))]
    for name, arr in arrays.items():
        arr = np.asarray(arr)
        code = _code(arr)
        raw_name = name.encode()
        parts.append(struct.pack("<H", len(raw_name)) + raw_name)
        parts.append(struct.pack("<BB", code, arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        parts.append(np.ascontiguousarray(arr, dtype=_CODES[code]).tobytes())
    return b"".join(parts)


def loads(blob: bytes) -> tuple[dict[str, np.ndarray], dict]:
    if blob[:4] != MAGIC:
        raise ContainerError("not a TDMC container (bad magic)")
    pos = 4
    version, meta_len = struct.unpack_from("<HI", blob, pos)
    pos += 6
    if version != VERSION:
        raise ContainerError(f"unsupported container version {version}")
    meta = json.loads(blob[pos:pos + meta_len].decode())
    pos += meta_len
    (count,) = struct.unpack_from("<I", blob, pos)
    pos += 4
    arrays = {}
    for _ in range(count):
        (nlen,) = struct.unpack_from("<H", blob, pos)
        pos += 2
        name = blob[pos:pos + nlen].decode()
        pos += nlen
        code, ndim = struct.unpack_from("<BB", blob, pos)
        pos += 2
        if code not in _CODES:
            raise ContainerError(f"{name}: unknown dtype code {code}")
        shape = struct.unpack_from(f"<{ndim}Q", blob, pos)
        pos += 8 * ndim
        dt = _CODES[code]
        nbytes = int(np.prod(shape, dtype=np.int64)) * dt.itemsize
        if pos + nbytes > len(blob):
            raise ContainerError(f"{name}: truncated data")
        arrays[name] = np.frombuffer(blob, dtype=dt, count=nbytes // dt.itemsize, offset=pos).reshape(shape).astype(dt.newbyteorder("="))
        pos += nbytes
    if pos != len(blob):
        raise ContainerError("trailing bytes after last array")
    return arrays, meta


def save(path, arrays: dict[str, np.ndarray], meta: dict | None = None) -> None:
    Path(path).write_bytes(dumps(arrays, meta))


def load(path) -> tuple[dict[str, np.ndarray], dict]:
    return loads(Path(path).read_bytes())
