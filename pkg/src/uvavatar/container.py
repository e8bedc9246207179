"""Little-endian binary container for named tensors.

Layout: 4-byte magic, u32 version, u32 tensor count, then per tensor:
u16 name length, utf-8 name, u8 dtype code, u8 ndim, u32 dims, raw data.
Tensors are written in the order given, so identical inputs produce
byte-identical files.
"""

from __future__ import annotations

import struct

import numpy as np

_DTYPES = {
    0: np.dtype("<f4"),
    1: np.dtype("<f8"),
    2: np.dtype("<i4"),
    3: np.dtype("<u1"),
    4: np.dtype("<i8"),
}
_CODES = {v: k for k, v in _DTYPES.items()}


class ContainerError(IOError):
    """Malformed or mismatching container file."""


def write_container(path, magic: bytes, version: int, tensors: dict[str, np.ndarray]) -> None:
    if len(magic) != 4:
        raise ValueError("magic must be 4 bytes")
    with open(path, "wb") as f:
        f.write(magic)
        f.write(struct.pack("<II", version, len(tensors)))
        for name, arr in tensors.items():
            arr = np.ascontiguousarray(arr)
            dt = arr.dtype.newbyteorder("<")
            if dt not in _CODES:
                raise ValueError(f"unsupported dtype {arr.dtype} for tensor {name!r}")
            nb = name.encode("utf-8")
            f.write(struct.pack("<H", len(nb)))
            f.write(nb)
            f.write(struct.pack("<BB", _CODES[dt], arr.ndim))
            f.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            f.write(arr.astype(dt, copy=False).tobytes())


def read_container(path, magic: bytes) -> tuple[int, dict[str, np.ndarray]]:
    with open(path, "rb") as f:
        got = f.read(4)
        if got != magic:
            raise ContainerError(f"bad magic {got!r}, expected {magic!r}")
        version, count = struct.unpack("<II", f.read(8))
        tensors: dict[str, np.ndarray] = {}
        for _ in range(count):
            (nlen,) = struct.unpack("<H", f.read(2))
            name = f.read(nlen).decode("utf-8")
            code, ndim = struct.unpack("<BB", f.read(2))
            if code not in _DTYPES:
                raise ContainerError(f"unknown dtype code {code} for tensor {name!r}")
            shape = struct.unpack(f"<{ndim}I", f.read(4 * ndim))
            dt = _DTYPES[code]
            nbytes = int(np.prod(shape, dtype=np.int64)) * dt.itemsize
            data = f.read(nbytes)
            if len(data) != nbytes:
                raise ContainerError(f"truncated tensor {name!r}")
            tensors[name] = np.frombuffer(data, dtype=dt).reshape(shape).copy()
    return version, tensors
