"""TRDI binary container: the single on-disk format for datasets, checkpoints,
and sample dumps.

Layout (all integers little-endian):
    bytes 0..3   magic ``b"TRDI"``
    u32          format version (currently 1)
    u32          manifest byte length, then that many UTF-8 bytes of
                 ``key=value`` lines (values JSON-encoded)
    u32          array count, then per array:
                     u16 name length, name bytes,
                     u32 ndim, u32 dims[ndim],
                     float32 data (little-endian, C order)

Floats are always stored as float32; float64 is never persisted.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"TRDI"
VERSION = 1


class ContainerError(Exception):
    """Base class for container read failures."""


class NotAContainerError(ContainerError):
    """File does not start with the TRDI magic bytes."""


class UnsupportedVersionError(ContainerError):
    """File carries a version this reader does not understand."""


class TruncatedContainerError(ContainerError):
    """File ended before the declared content was read."""


def write_container(path, manifest: dict, arrays: dict) -> None:
    """Write ``manifest`` (str keys/JSON-serializable values) and named float32
    arrays to ``path``. Keys are written in sorted order so output bytes are
    deterministic."""
    chunks = [MAGIC, struct.pack("<I", VERSION)]

    lines = []
    for key in sorted(manifest):
        if "=" in key or "\n" in key:
            raise ValueError(f"illegal manifest key: {key!r}")
        lines.append(f"{key}={json.dumps(manifest[key], sort_keys=True)}")
    blob = "\n".join(lines).encode("utf-8")
    chunks.append(struct.pack("<I", len(blob)))
    chunks.append(blob)

    chunks.append(struct.pack("<I", len(arrays)))
    for name in sorted(arrays):
        arr = np.asarray(arrays[name], dtype="<f4")
        if not arr.flags["C_CONTIGUOUS"]:
            arr = np.ascontiguousarray(arr)
        encoded = name.encode("utf-8")
        chunks.append(struct.pack("<H", len(encoded)))
        chunks.append(encoded)
        chunks.append(struct.pack("<I", arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        chunks.append(arr.tobytes())

    tmp = Path(path).with_name(Path(path).name + ".tmp")
    tmp.write_bytes(b"".join(chunks))
    tmp.replace(path)  # atomic on POSIX


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise TruncatedContainerError("unexpected end of container")
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def u16(self) -> int:
        return struct.unpack("<H", self.take(2))[0]

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]


def read_container(path) -> tuple[dict, dict]:
    """Read a TRDI container, returning ``(manifest, arrays)``.

    Raises NotAContainerError, UnsupportedVersionError, or
    TruncatedContainerError on the corresponding kinds of corruption."""
    reader = _Reader(Path(path).read_bytes())
    if reader.take(4) != MAGIC:
        raise NotAContainerError("not a TRDI container")
    version = reader.u32()
    if version != VERSION:
        raise UnsupportedVersionError(f"unsupported TRDI version {version}")

    manifest = {}
    blob = reader.take(reader.u32()).decode("utf-8")
    if blob:
        for line in blob.split("\n"):
            key, _, value = line.partition("=")
            manifest[key] = json.loads(value)

    arrays = {}
    for _ in range(reader.u32()):
        name = reader.take(reader.u16()).decode("utf-8")
        ndim = reader.u32()
        shape = tuple(reader.u32() for _ in range(ndim))
        count = int(np.prod(shape, dtype=np.int64)) if shape else 1
        raw = reader.take(4 * count)
        arrays[name] = np.frombuffer(raw, dtype="<f4").reshape(shape).copy()
    return manifest, arrays
