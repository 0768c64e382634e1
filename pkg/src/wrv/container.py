"""Binary container for named tensors.

A container file starts with the magic bytes ``WRV1`` followed by a
sequence of entries until end of file. Every integer field is
little-endian. Each entry is laid out as:

* name length, ``uint32``
* name, UTF-8 bytes
* dtype code, ``uint8``
* rank, ``uint8``
* one ``uint64`` per dimension
* raw array data, C order, little-endian

Entry names must be unique within a file. Round trips are bit exact.
"""

from __future__ import annotations

import os
import struct
import tempfile
from pathlib import Path

import numpy as np

MAGIC = b"WRV1"

# dtype code -> little-endian numpy dtype
_CODE_TO_DTYPE = {
    1: np.dtype("<f4"),
    2: np.dtype("<f8"),
    3: np.dtype("<i8"),
    4: np.dtype("<u1"),
}
_DTYPE_TO_CODE = {dt: code for code, dt in _CODE_TO_DTYPE.items()}


class ContainerError(ValueError):
    """Raised for malformed container files or unsupported payloads."""


def _dtype_code(arr: np.ndarray) -> int:
    dt = arr.dtype.newbyteorder("<")
    code = _DTYPE_TO_CODE.get(dt)
    if code is None:
        supported = ", ".join(str(d) for d in _DTYPE_TO_CODE)
        raise ContainerError(
            f"unsupported dtype {arr.dtype}; supported: {supported}"
        )
    return code


def pack_tensors(tensors: dict[str, np.ndarray]) -> bytes:
    """Serialize a name -> array mapping, preserving insertion order."""
    chunks = [MAGIC]
    seen: set[str] = set()
    for name, arr in tensors.items():
        if name in seen:
            raise ContainerError(f"duplicate entry name {name!r}")
        seen.add(name)
        arr = np.asarray(arr)
        code = _dtype_code(arr)
        data = np.ascontiguousarray(arr, dtype=_CODE_TO_DTYPE[code])
        name_bytes = name.encode("utf-8")
        chunks.append(struct.pack("<I", len(name_bytes)))
        chunks.append(name_bytes)
        chunks.append(struct.pack("<BB", code, arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        chunks.append(data.tobytes(order="C"))
    return b"".join(chunks)


def unpack_tensors(blob: bytes) -> dict[str, np.ndarray]:
    """Inverse of :func:`pack_tensors`."""
    if blob[:4] != MAGIC:
        raise ContainerError("bad magic; not a WRV1 container")
    out: dict[str, np.ndarray] = {}
    pos = 4
    total = len(blob)

    def take(n: int) -> bytes:
        nonlocal pos
        if pos + n > total:
            raise ContainerError("truncated container")
        piece = blob[pos : pos + n]
        pos += n
        return piece

    while pos < total:
        (name_len,) = struct.unpack("<I", take(4))
        name = take(name_len).decode("utf-8")
        code, rank = struct.unpack("<BB", take(2))
        if code not in _CODE_TO_DTYPE:
            raise ContainerError(f"unknown dtype code {code}")
        shape = struct.unpack(f"<{rank}Q", take(8 * rank))
        dtype = _CODE_TO_DTYPE[code]
        count = int(np.prod(shape, dtype=np.int64)) if rank else 1
        raw = take(count * dtype.itemsize)
        arr = np.frombuffer(raw, dtype=dtype).reshape(shape).copy()
        if name in out:
            raise ContainerError(f"duplicate entry name {name!r}")
        out[name] = arr
    return out


def write_tensors(path: str | Path, tensors: dict[str, np.ndarray]) -> bool:
    """Write a container atomically.

    Returns True if the file was (re)written, False if an identical
    file was already present (the existing file is left untouched, so
    repeated runs with identical inputs are no-ops).
    """
    return write_bytes(path, pack_tensors(tensors))


def read_tensors(path: str | Path) -> dict[str, np.ndarray]:
    return unpack_tensors(Path(path).read_bytes())


def write_bytes(path: str | Path, data: bytes) -> bool:
    """Atomic write (temp file + rename), skipped when content is unchanged."""
    path = Path(path)
    if path.exists() and path.read_bytes() == data:
        return False
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return True
