"""The "TCT1" binary tensor format shared by fixtures and checkpoints.

Layout: magic bytes ``TCT1``, u8 rank, rank little-endian u32 extents,
u8 dtype tag (0 = float32, 1 = float64), then the raw little-endian
scalars in row-major order.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MAGIC = b"TCT1"

_TAG_TO_DTYPE = {0: np.dtype("<f4"), 1: np.dtype("<f8")}
_DTYPE_TO_TAG = {np.dtype(np.float32): 0, np.dtype(np.float64): 1}

MAX_RANK = 8


class TensorFormatError(ValueError):
    """Malformed TCT1 payload; the message carries the byte offset."""


def tensor_to_bytes(arr):
    # note: ascontiguousarray would promote 0-d to 1-d; tobytes() below
    # already emits row-major bytes for any memory layout
    arr = np.asarray(arr)
    if arr.dtype not in _DTYPE_TO_TAG:
        raise TypeError(f"TCT1 stores float32/float64 only, got {arr.dtype}")
    if arr.ndim > MAX_RANK:
        raise ValueError(f"TCT1 rank limit is {MAX_RANK}, got {arr.ndim}")
    head = MAGIC + struct.pack("<B", arr.ndim)
    head += struct.pack(f"<{arr.ndim}I", *arr.shape)
    head += struct.pack("<B", _DTYPE_TO_TAG[arr.dtype])
    return head + arr.astype(arr.dtype.newbyteorder("<")).tobytes()


def tensor_from_bytes(buf, offset=0):
    """Decode one record; returns (array, next_offset)."""
    base = offset
    if buf[offset : offset + 4] != MAGIC:
        raise TensorFormatError(f"bad magic at byte {base}")
    offset += 4
    if offset >= len(buf):
        raise TensorFormatError(f"truncated header at byte {offset}")
    rank = buf[offset]
    offset += 1
    if rank > MAX_RANK:
        raise TensorFormatError(f"implausible rank {rank} at byte {offset - 1}")
    need = 4 * rank
    if offset + need > len(buf):
        raise TensorFormatError(f"truncated shape table at byte {offset}")
    shape = struct.unpack(f"<{rank}I", buf[offset : offset + need])
    offset += need
    if offset >= len(buf):
        raise TensorFormatError(f"truncated dtype tag at byte {offset}")
    tag = buf[offset]
    offset += 1
    if tag not in _TAG_TO_DTYPE:
        raise TensorFormatError(f"unknown dtype tag {tag} at byte {offset - 1}")
    dtype = _TAG_TO_DTYPE[tag]
    count = int(np.prod(shape, dtype=np.int64)) if rank else 1
    nbytes = count * dtype.itemsize
    if offset + nbytes > len(buf):
        raise TensorFormatError(
            f"truncated payload at byte {offset}: need {nbytes} bytes, "
            f"have {len(buf) - offset}"
        )
    arr = np.frombuffer(buf, dtype=dtype, count=count, offset=offset).reshape(shape)
    # astype copies out of the read-only buffer and into native byte order
    return arr.astype(arr.dtype.newbyteorder("=")), offset + nbytes


def write_tensor(path, arr):
    Path(path).write_bytes(tensor_to_bytes(arr))


def read_tensor(path):
    buf = Path(path).read_bytes()
    arr, end = tensor_from_bytes(buf)
    if end != len(buf):
        raise TensorFormatError(f"trailing {len(buf) - end} bytes after record at byte {end}")
    return arr
