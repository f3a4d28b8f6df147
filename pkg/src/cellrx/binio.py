"""Little-endian binary primitives and the versioned weight-sidecar container.

The embedding-exchange file and all weight sidecars (encoder, MLP head, LoRA
adapters) share these conventions: fixed 8-byte magic, u16 version, u32
length-prefixed UTF-8 strings, u64 counts, raw little-endian array payloads.
"""

from __future__ import annotations

import io
import json
import struct
from typing import BinaryIO

import numpy as np

from .errors import CorruptionError, FormatError

SIDECAR_MAGIC = b"SCDMWTS1"
SIDECAR_VERSION = 1

_DTYPE_CODES = {
    np.dtype("<f8"): 1,
    np.dtype("<f4"): 2,
    np.dtype("<i8"): 3,
}
_CODE_DTYPES = {v: k for k, v in _DTYPE_CODES.items()}


def write_u16(f: BinaryIO, value: int) -> None:
    f.write(struct.pack("<H", value))


def write_u32(f: BinaryIO, value: int) -> None:
    f.write(struct.pack("<I", value))


def write_u64(f: BinaryIO, value: int) -> None:
    f.write(struct.pack("<Q", value))


def write_str(f: BinaryIO, s: str) -> None:
    data = s.encode("utf-8")
    write_u32(f, len(data))
    f.write(data)


def read_exact(f: BinaryIO, n: int, what: str) -> bytes:
    data = f.read(n)
    if len(data) != n:
        raise CorruptionError(f"truncated file while reading {what}")
    return data


def read_u16(f: BinaryIO, what: str = "u16") -> int:
    return struct.unpack("<H", read_exact(f, 2, what))[0]


def read_u32(f: BinaryIO, what: str = "u32") -> int:
    return struct.unpack("<I", read_exact(f, 4, what))[0]


def read_u64(f: BinaryIO, what: str = "u64") -> int:
    return struct.unpack("<Q", read_exact(f, 8, what))[0]


def read_str(f: BinaryIO, what: str = "string") -> str:
    n = read_u32(f, what)
    return read_exact(f, n, what).decode("utf-8")


def save_arrays(path, kind: str, arrays: dict[str, np.ndarray], meta: dict | None = None) -> None:
    """Write a named-array container; keys are stored sorted for byte stability."""
    buf = io.BytesIO()
    buf.write(SIDECAR_MAGIC)
    write_u16(buf, SIDECAR_VERSION)
    write_str(buf, kind)
    write_str(buf, json.dumps(meta or {}, sort_keys=True, separators=(",", ":")))
    write_u32(buf, len(arrays))
    for name in sorted(arrays):
        original = np.asarray(arrays[name])
        # ascontiguousarray promotes 0-d to 1-d; keep the declared shape
        arr = np.ascontiguousarray(original)
        dtype = arr.dtype.newbyteorder("<")
        if dtype not in _DTYPE_CODES:
            raise FormatError(f"unsupported dtype {arr.dtype} for array {name!r}")
        write_str(buf, name)
        write_u16(buf, _DTYPE_CODES[dtype])
        write_u32(buf, original.ndim)
        for dim in original.shape:
            write_u64(buf, dim)
        buf.write(arr.astype(dtype, copy=False).tobytes())
    with open(path, "wb") as f:
        f.write(buf.getvalue())


def load_arrays(path) -> tuple[str, dict[str, np.ndarray], dict]:
    with open(path, "rb") as f:
        magic = f.read(len(SIDECAR_MAGIC))
        if magic != SIDECAR_MAGIC:
            raise FormatError(f"bad magic {magic!r}; expected {SIDECAR_MAGIC!r}")
        version = read_u16(f, "version")
        if version != SIDECAR_VERSION:
            raise FormatError(f"unsupported sidecar version {version}")
        kind = read_str(f, "kind")
        meta = json.loads(read_str(f, "meta"))
        count = read_u32(f, "array count")
        arrays: dict[str, np.ndarray] = {}
        for _ in range(count):
            name = read_str(f, "array name")
            dtype = _CODE_DTYPES.get(read_u16(f, "dtype code"))
            if dtype is None:
                raise FormatError(f"unknown dtype code in array {name!r}")
            ndim = read_u32(f, "ndim")
            shape = tuple(read_u64(f, "dim") for _ in range(ndim))
            n_bytes = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize if shape else dtype.itemsize
            n_items = int(np.prod(shape, dtype=np.int64)) if shape else 1
            payload = read_exact(f, n_bytes, f"payload of {name!r}")
            arrays[name] = np.frombuffer(payload, dtype=dtype, count=n_items).reshape(shape).copy()
        trailing = f.read(1)
        if trailing:
            raise FormatError("trailing bytes after last array")
    return kind, arrays, meta
