"""Little-endian binary tensor records: ``b"TNSR"``, u32 rank, u64 extents, f32 payload."""

from __future__ import annotations

import struct
from typing import BinaryIO

import numpy as np

MAGIC = b"TNSR"


class FormatError(ValueError):
    """Malformed binary input; ``offset`` is the byte position where parsing failed."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


def write_tensor(stream: BinaryIO, arr: np.ndarray) -> None:
    arr = np.ascontiguousarray(arr, dtype="<f4")
    stream.write(MAGIC)
    stream.write(struct.pack("<I", arr.ndim))
    stream.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
    stream.write(arr.tobytes())


def read_tensor(stream: BinaryIO) -> np.ndarray:
    start = stream.tell()
    magic = stream.read(4)
    if magic != MAGIC:
        raise FormatError(f"bad tensor magic {magic!r}", start)
    raw = stream.read(4)
    if len(raw) != 4:
        raise FormatError("truncated tensor rank", start + 4)
    (rank,) = struct.unpack("<I", raw)
    if rank > 5:
        raise FormatError(f"tensor rank {rank} exceeds 5", start + 4)
    raw = stream.read(8 * rank)
    if len(raw) != 8 * rank:
        raise FormatError("truncated tensor extents", start + 8)
    shape = struct.unpack(f"<{rank}Q", raw)
    nbytes = 4 * int(np.prod(shape, dtype=np.int64))
    payload = stream.read(nbytes)
    if len(payload) != nbytes:
        raise FormatError(f"truncated tensor payload: wanted {nbytes} bytes, got {len(payload)}", start + 8 + 8 * rank)
    return np.frombuffer(payload, dtype="<f4").reshape(shape).astype(np.float32)
