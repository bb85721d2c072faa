"""Flat binary parameter container.

Layout (all integers little-endian uint32, all data little-endian
float32):

    magic   4 bytes  b"SWPT"
    version uint32   currently 1
    count   uint32   number of tensor records
    then per record:
        name_len uint32
        name     utf-8 bytes
        rank     uint32
        extents  uint32 * rank
        data     float32 * prod(extents)
"""

from __future__ import annotations

import struct

import numpy as np

from .errors import DataError

MAGIC = b"SWPT"
VERSION = 1


def save_params(path, named_tensors):
    """Write (name, Tensor) pairs; values are stored as float32."""
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", VERSION, len(named_tensors)))
        for name, tensor in named_tensors:
            raw = name.encode("utf-8")
            arr = np.ascontiguousarray(tensor.data, dtype="<f4")
            fh.write(struct.pack("<I", len(raw)))
            fh.write(raw)
            fh.write(struct.pack("<I", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(arr.tobytes())


def load_params(path):
    """Read a container into an ordered {name: float32 ndarray} dict."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != MAGIC:
        raise DataError(f"{path}: bad magic, not a parameter container")
    version, count = struct.unpack_from("<II", blob, 4)
    if version != VERSION:
        raise DataError(f"{path}: unsupported container version {version}")
    offset = 12
    out = {}
    for _ in range(count):
        (name_len,) = struct.unpack_from("<I", blob, offset)
        offset += 4
        name = blob[offset : offset + name_len].decode("utf-8")
        offset += name_len
        (rank,) = struct.unpack_from("<I", blob, offset)
        offset += 4
        extents = struct.unpack_from(f"<{rank}I", blob, offset)
        offset += 4 * rank
        size = int(np.prod(extents)) if rank else 1
        arr = np.frombuffer(blob, dtype="<f4", count=size, offset=offset)
        offset += 4 * size
        out[name] = arr.reshape(extents).copy()
    if offset != len(blob):
        raise DataError(f"{path}: trailing bytes after last record")
    return out


def load_into(named_tensors, path):
    """Load a container and copy values into matching tensors by name."""
    stored = load_params(path)
    for name, tensor in named_tensors:
        if name not in stored:
            raise DataError(f"{path}: missing parameter {name}")
        arr = stored.pop(name)
        if tuple(arr.shape) != tuple(tensor.shape):
            raise DataError(
                f"{path}: shape mismatch for {name}: "
                f"stored {arr.shape} vs expected {tensor.shape}"
            )
        tensor.data[...] = arr.astype(tensor.dtype)
    if stored:
        extra = ", ".join(sorted(stored))
        raise DataError(f"{path}: unexpected parameters: {extra}")
