"""Versioned binary container: JSON metadata plus shape-prefixed arrays.

Layout: 4-byte magic, u32 format version, u32 metadata length, UTF-8
JSON metadata, u32 array count, then per array a length-prefixed name,
a dtype code, u32 ndim, u64 dimensions and the row-major payload.
"""

from __future__ import annotations

import json
import struct

import numpy as np

FORMAT_VERSION = 1

_DTYPE_CODES = {
    np.dtype(np.complex128): 0,
    np.dtype(np.float64): 1,
    np.dtype(np.float32): 2,
    np.dtype(np.int64): 3,
}
_CODE_DTYPES = {v: k for k, v in _DTYPE_CODES.items()}


class ContainerError(IOError):
    """Raised on magic/version mismatch or a corrupt payload."""


def write_container(path, magic: bytes, meta: dict, arrays: dict) -> None:
    if len(magic) != 4:
        raise ValueError("magic must be 4 bytes")
    meta_bytes = json.dumps(meta, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(magic)
        fh.write(struct.pack("<II", FORMAT_VERSION, len(meta_bytes)))
        fh.write(meta_bytes)
        fh.write(struct.pack("<I", len(arrays)))
        for name, arr in arrays.items():
            arr = np.ascontiguousarray(arr)
            if arr.dtype not in _DTYPE_CODES:
                raise ValueError(f"unsupported dtype {arr.dtype} for array {name!r}")
            name_bytes = name.encode("utf-8")
            fh.write(struct.pack("<H", len(name_bytes)))
            fh.write(name_bytes)
            fh.write(struct.pack("<BI", _DTYPE_CODES[arr.dtype], arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
            fh.write(arr.tobytes())


def _read_exact(fh, count: int, what: str) -> bytes:
    data = fh.read(count)
    if len(data) != count:
        raise ContainerError(f"truncated container while reading {what}")
    return data


def read_container(path, magic: bytes) -> tuple[dict, dict]:
    with open(path, "rb") as fh:
        got = _read_exact(fh, 4, "magic")
        if got != magic:
            raise ContainerError(f"bad magic {got!r}, expected {magic!r}")
        version, meta_len = struct.unpack("<II", _read_exact(fh, 8, "header"))
        if version != FORMAT_VERSION:
            raise ContainerError(f"unsupported format version {version}")
        try:
            meta = json.loads(_read_exact(fh, meta_len, "metadata"))
        except json.JSONDecodeError as exc:
            raise ContainerError(f"corrupt metadata block: {exc}") from exc
        (n_arrays,) = struct.unpack("<I", _read_exact(fh, 4, "array count"))
        arrays = {}
        for _ in range(n_arrays):
            (name_len,) = struct.unpack("<H", _read_exact(fh, 2, "array name length"))
            name = _read_exact(fh, name_len, "array name").decode("utf-8")
            code, ndim = struct.unpack("<BI", _read_exact(fh, 5, "array header"))
            if code not in _CODE_DTYPES:
                raise ContainerError(f"unknown dtype code {code} for array {name!r}")
            shape = struct.unpack(f"<{ndim}Q", _read_exact(fh, 8 * ndim, "array shape"))
            dtype = _CODE_DTYPES[code]
            payload = _read_exact(fh, dtype.itemsize * int(np.prod(shape, dtype=np.int64)),
                                  f"array {name!r} payload")
            arrays[name] = np.frombuffer(payload, dtype=dtype).reshape(shape).copy()
        return meta, arrays
