"""Bit-exact binary weight serialization.

Layout (all integers little-endian):

    magic   4 bytes  b"DATW"
    version u32      1
    count   u32      number of tensors
    entry*  u32 name length, UTF-8 name, u8 rank, u32 dims[rank],
            raw little-endian float32 data (row-major)

Entries are written in canonical parameter order.  Loading validates every
expected name and shape against the built model and rejects unknown extras;
save followed by load restores all float32 parameters bit-exactly.
"""
from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .model import DatModel, named_params

MAGIC = b"DATW"
VERSION = 1


class WeightFormatError(Exception):
    """The file is not a well-formed weight store."""


class WeightMismatchError(Exception):
    """The store does not match the built model (name or shape)."""


def save_weights(model: DatModel, path) -> None:
    path = Path(path)
    chunks: list[bytes] = []
    entries = named_params(model)
    chunks.append(MAGIC)
    chunks.append(struct.pack("<II", VERSION, len(entries)))
    for name, tensor in entries:
        encoded = name.encode("utf-8")
        data = np.ascontiguousarray(tensor.data, dtype="<f4")
        chunks.append(struct.pack("<I", len(encoded)))
        chunks.append(encoded)
        chunks.append(struct.pack("<B", data.ndim))
        chunks.append(struct.pack(f"<{data.ndim}I", *data.shape))
        chunks.append(data.tobytes())
    path.write_bytes(b"".join(chunks))


class _Reader:
    def __init__(self, blob: bytes, path: Path):
        self.blob = blob
        self.path = path
        self.offset = 0

    def take(self, count: int) -> bytes:
        if self.offset + count > len(self.blob):
            raise WeightFormatError(f"{self.path}: truncated file at byte {self.offset}")
        piece = self.blob[self.offset:self.offset + count]
        self.offset += count
        return piece


def _parse_store(path: Path) -> dict[str, np.ndarray]:
    blob = path.read_bytes()
    if blob[:4] != MAGIC:
        raise WeightFormatError(f"{path}: bad magic, not a weight store")
    reader = _Reader(blob, path)
    reader.take(4)
    version, count = struct.unpack("<II", reader.take(8))
    if version != VERSION:
        raise WeightFormatError(f"{path}: unsupported version {version}")
    store: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = struct.unpack("<I", reader.take(4))
        name = reader.take(name_len).decode("utf-8")
        (rank,) = struct.unpack("<B", reader.take(1))
        dims = struct.unpack(f"<{rank}I", reader.take(4 * rank))
        size = int(np.prod(dims)) if dims else 1
        data = np.frombuffer(reader.take(4 * size), dtype="<f4").reshape(dims)
        if name in store:
            raise WeightFormatError(f"{path}: duplicate tensor name {name!r}")
        store[name] = data
    if reader.offset != len(reader.blob):
        raise WeightFormatError(f"{path}: {len(reader.blob) - reader.offset} trailing bytes")
    return store


def load_weights(model: DatModel, path) -> None:
    """Bind stored tensors onto the model, validating names and shapes."""
    path = Path(path)
    store = _parse_store(path)
    expected = named_params(model)
    for name, tensor in expected:
        if name not in store:
            raise WeightMismatchError(f"{path}: missing tensor {name!r}")
        data = store[name]
        if data.shape != tensor.shape:
            raise WeightMismatchError(
                f"{path}: shape mismatch for {name!r}: file {data.shape}, model {tensor.shape}")
    known = {name for name, _ in expected}
    for name in store:
        if name not in known:
            raise WeightMismatchError(f"{path}: unexpected tensor {name!r}")
    for name, tensor in expected:
        tensor.data = store[name].astype(tensor.dtype, copy=True)
