"""Binary checkpoint container.

Layout, all integers little-endian:

    magic  b"FSEG"
    u32    container version (currently 1)
    u32    metadata byte length, then that many UTF-8 bytes of "key=value"
           lines sorted by key
    u32    tensor count, then per tensor (sorted by name):
               u16     name byte length, then the UTF-8 name
               u8      rank
               u32[r]  dimension sizes
               f64[n]  row-major values

Entries are sorted so saving the same state twice yields byte-identical
files, which is what makes checkpoint comparison by hash meaningful.
"""

from __future__ import annotations

import struct

import numpy as np

from .exceptions import CheckpointError

MAGIC = b"FSEG"
VERSION = 1


def _encode_metadata(metadata: dict[str, str]) -> bytes:
    lines = []
    for key in sorted(metadata):
        value = str(metadata[key])
        if "=" not in key and key and "\n" not in key and "\n" not in value:
            lines.append(f"{key}={value}")
        else:
            raise CheckpointError(f"metadata key {key!r} or its value is not "
                                  f"representable as a key=value line")
    return "\n".join(lines).encode("utf-8")


def _decode_metadata(blob: bytes) -> dict[str, str]:
    if not blob:
        return {}
    out = {}
    for line in blob.decode("utf-8").split("\n"):
        key, sep, value = line.partition("=")
        if not sep:
            raise CheckpointError(f"metadata line {line!r} lacks '='")
        out[key] = value
    return out


def save_checkpoint(path: str, tensors: dict[str, np.ndarray],
                    metadata: dict[str, str] | None = None) -> None:
    meta_blob = _encode_metadata(metadata or {})
    parts = [MAGIC, struct.pack("<I", VERSION),
             struct.pack("<I", len(meta_blob)), meta_blob,
             struct.pack("<I", len(tensors))]
    for name in sorted(tensors):
        # asarray, not ascontiguousarray: the latter promotes rank 0 to rank 1
        arr = np.asarray(tensors[name], dtype=np.float64)
        name_b = name.encode("utf-8")
        if len(name_b) > 0xFFFF:
            raise CheckpointError(f"tensor name too long: {name!r}")
        if arr.ndim > 0xFF:
            raise CheckpointError(f"tensor {name!r} rank {arr.ndim} exceeds 255")
        parts.append(struct.pack("<H", len(name_b)))
        parts.append(name_b)
        parts.append(struct.pack("<B", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(arr.astype("<f8").tobytes())
    with open(path, "wb") as fh:
        fh.write(b"".join(parts))


def load_checkpoint(path: str) -> tuple[dict[str, np.ndarray], dict[str, str]]:
    with open(path, "rb") as fh:
        blob = fh.read()
    pos = 0

    def take(n: int, what: str) -> bytes:
        nonlocal pos
        if pos + n > len(blob):
            raise CheckpointError(f"{path}: truncated while reading {what} at "
                                  f"byte {pos} (wanted {n}, have {len(blob) - pos})")
        chunk = blob[pos:pos + n]
        pos += n
        return chunk

    if take(4, "magic") != MAGIC:
        raise CheckpointError(f"{path}: bad magic at byte 0, not a checkpoint")
    (version,) = struct.unpack("<I", take(4, "version"))
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported container version {version}, "
                              f"this build reads version {VERSION}")
    (meta_len,) = struct.unpack("<I", take(4, "metadata length"))
    metadata = _decode_metadata(take(meta_len, "metadata"))
    (count,) = struct.unpack("<I", take(4, "tensor count"))
    tensors: dict[str, np.ndarray] = {}
    for i in range(count):
        (name_len,) = struct.unpack("<H", take(2, f"tensor {i} name length"))
        name = take(name_len, f"tensor {i} name").decode("utf-8")
        (rank,) = struct.unpack("<B", take(1, f"{name} rank"))
        dims = struct.unpack(f"<{rank}I", take(4 * rank, f"{name} dims"))
        n = int(np.prod(dims, dtype=np.int64)) if rank else 1
        raw = take(8 * n, f"{name} values")
        if name in tensors:
            raise CheckpointError(f"{path}: duplicate tensor {name!r}")
        tensors[name] = np.frombuffer(raw, dtype="<f8").reshape(dims).copy()
    if pos != len(blob):
        raise CheckpointError(f"{path}: {len(blob) - pos} trailing bytes after "
                              f"the last tensor (byte {pos})")
    return tensors, metadata
