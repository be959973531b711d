"""Checkpoint files: named float64 arrays in a little-endian container.

Layout:

    magic   9 bytes  b"HMWM-CKPT"
    version u32
    then repeated until EOF, one record per array:
        name_len u32, name utf-8 bytes
        rank     u32, extents rank * u64
        payload  prod(extents) * f64

Everything after the magic is little-endian.  Round-trips are bit-exact:
the payload bytes are the arrays' own IEEE-754 representations.
"""

from __future__ import annotations

import struct

import numpy as np

from .errors import DataFormatError

MAGIC = b"HMWM-CKPT"
VERSION = 1

# written in sorted-name order for reproducible bytes
_MAX_NAME = 4096
_MAX_RANK = 32


def save_checkpoint(path, arrays: dict):
    """Write `arrays` (name -> ndarray) to `path`."""
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", VERSION))
        for name in sorted(arrays):
            # ascontiguousarray would promote rank 0 to rank 1
            arr = np.asarray(arrays[name], dtype="<f8")
            if not arr.flags.c_contiguous:
                arr = np.ascontiguousarray(arr)
            enc = name.encode("utf-8")
            f.write(struct.pack("<I", len(enc)))
            f.write(enc)
            f.write(struct.pack("<I", arr.ndim))
            for e in arr.shape:
                f.write(struct.pack("<Q", e))
            f.write(arr.tobytes())


def _read_exact(f, n: int, what: str) -> bytes:
    buf = f.read(n)
    if len(buf) != n:
        raise DataFormatError(f"checkpoint truncated while reading {what}")
    return buf


def load_checkpoint(path) -> dict:
    """Read a checkpoint back into a name -> float64 ndarray dict."""
    arrays = {}
    with open(path, "rb") as f:
        magic = f.read(len(MAGIC))
        if magic != MAGIC:
            raise DataFormatError(f"bad checkpoint magic {magic!r} in {path}")
        (version,) = struct.unpack("<I", _read_exact(f, 4, "version"))
        if version != VERSION:
            raise DataFormatError(f"unsupported checkpoint version {version}")
        while True:
            head = f.read(4)
            if not head:
                break
            if len(head) != 4:
                raise DataFormatError("checkpoint truncated while reading name length")
            (name_len,) = struct.unpack("<I", head)
            if name_len == 0 or name_len > _MAX_NAME:
                raise DataFormatError(f"implausible name length {name_len}")
            try:
                name = _read_exact(f, name_len, "name").decode("utf-8")
            except UnicodeDecodeError as e:
                raise DataFormatError(f"checkpoint name is not utf-8: {e}") from e
            (rank,) = struct.unpack("<I", _read_exact(f, 4, "rank"))
            if rank > _MAX_RANK:
                raise DataFormatError(f"implausible rank {rank} for {name}")
            shape = struct.unpack(
                f"<{rank}Q", _read_exact(f, 8 * rank, f"extents of {name}")
            )
            count = 1
            for e in shape:
                count *= e
            payload = _read_exact(f, 8 * count, f"payload of {name}")
            if name in arrays:
                raise DataFormatError(f"duplicate array name {name}")
            arrays[name] = np.frombuffer(payload, dtype="<f8").reshape(shape).copy()
    return arrays


def split_prefix(arrays: dict, prefix: str) -> dict:
    """Sub-dict of names under `prefix` ('hpc/' etc.), prefix stripped."""
    n = len(prefix)
    return {k[n:]: v for k, v in arrays.items() if k.startswith(prefix)}
