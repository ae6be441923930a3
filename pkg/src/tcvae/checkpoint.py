"""Self-describing binary checkpoints: magic bytes, format version, a JSON
block holding the model configuration and scaler, a named array table with
per-array precision tags, and a trailing CRC-32 over everything before it.

All integers and raw array bytes are little-endian, so files are portable
across platforms and round-trip bit-exactly.
"""

from __future__ import annotations

import json
import struct
import zlib
from pathlib import Path

import numpy as np

from tcvae.data import Scaler
from tcvae.model import ModelConfig, TCVAE

__all__ = ["CheckpointError", "FORMAT_VERSION", "MAGIC", "load_checkpoint",
           "save_checkpoint"]

MAGIC = b"TCVA"
FORMAT_VERSION = 1

_TAG_FOR_DTYPE = {"float32": b"f32", "float64": b"f64"}
_DTYPE_FOR_TAG = {b"f32": "<f4", b"f64": "<f8"}


class CheckpointError(RuntimeError):
    """Raised for unreadable, corrupted, or incompatible checkpoint files."""


def save_checkpoint(model: TCVAE, scaler: Scaler, path) -> None:
    """Serialize the model parameters and scaler; overwrites ``path``."""
    header = {
        "config": model.config.to_dict(),
        "scaler": scaler.to_dict(),
    }
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    payload = bytearray()
    payload += MAGIC
    payload += struct.pack("<I", FORMAT_VERSION)
    payload += struct.pack("<I", len(header_bytes))
    payload += header_bytes
    named = model.named_parameters()
    payload += struct.pack("<I", len(named))
    for name, param in named:
        data = np.asarray(param.data)
        tag = _TAG_FOR_DTYPE.get(data.dtype.name)
        if tag is None:
            raise CheckpointError(f"parameter {name!r} has unsupported dtype "
                                  f"{data.dtype.name}")
        name_bytes = name.encode("utf-8")
        payload += struct.pack("<H", len(name_bytes))
        payload += name_bytes
        payload += tag
        payload += struct.pack("<B", data.ndim)
        payload += struct.pack(f"<{data.ndim}I", *data.shape)
        raw = np.ascontiguousarray(data, dtype=data.dtype.newbyteorder("<")).tobytes()
        payload += struct.pack("<Q", len(raw))
        payload += raw
    payload += struct.pack("<I", zlib.crc32(bytes(payload)))
    Path(path).write_bytes(bytes(payload))


class _Reader:
    def __init__(self, blob: bytes, path):
        self.blob = blob
        self.offset = 0
        self.path = path

    def take(self, count: int) -> bytes:
        if self.offset + count > len(self.blob):
            raise CheckpointError(f"checkpoint {self.path} is truncated")
        chunk = self.blob[self.offset:self.offset + count]
        self.offset += count
        return chunk

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def load_checkpoint(path) -> tuple[TCVAE, Scaler]:
    """Rebuild a model and scaler from ``path``; validates the checksum and
    format version before touching any content."""
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"checkpoint file not found: {path}")
    blob = path.read_bytes()
    if len(blob) < len(MAGIC) + 8:
        raise CheckpointError(f"checkpoint {path} is truncated")
    stored_crc = struct.unpack("<I", blob[-4:])[0]
    actual_crc = zlib.crc32(blob[:-4])
    if stored_crc != actual_crc:
        raise CheckpointError(f"checkpoint {path} failed checksum validation "
                              f"(stored {stored_crc:#010x}, computed {actual_crc:#010x})")
    reader = _Reader(blob[:-4], path)
    magic = reader.take(len(MAGIC))
    if magic != MAGIC:
        raise CheckpointError(f"checkpoint {path} has wrong magic bytes {magic!r}")
    version = reader.unpack("<I")[0]
    if version != FORMAT_VERSION:
        raise CheckpointError(f"checkpoint {path} has format version {version}; "
                              f"this build reads version {FORMAT_VERSION}")
    header_len = reader.unpack("<I")[0]
    header = json.loads(reader.take(header_len).decode("utf-8"))
    config = ModelConfig.from_dict(header["config"])
    scaler = Scaler.from_dict(header["scaler"])

    arrays: dict[str, np.ndarray] = {}
    count = reader.unpack("<I")[0]
    for _ in range(count):
        name_len = reader.unpack("<H")[0]
        name = reader.take(name_len).decode("utf-8")
        tag = reader.take(3)
        if tag not in _DTYPE_FOR_TAG:
            raise CheckpointError(f"array {name!r} has unknown precision tag {tag!r}")
        ndim = reader.unpack("<B")[0]
        shape = reader.unpack(f"<{ndim}I") if ndim else ()
        raw_len = reader.unpack("<Q")[0]
        raw = reader.take(raw_len)
        data = np.frombuffer(raw, dtype=_DTYPE_FOR_TAG[tag]).reshape(shape)
        arrays[name] = data.astype(data.dtype.newbyteorder("="), copy=True)

    model = TCVAE(config)
    expected = dict(model.named_parameters())
    if set(arrays) != set(expected):
        missing = sorted(set(expected) - set(arrays))[:3]
        extra = sorted(set(arrays) - set(expected))[:3]
        raise CheckpointError(f"checkpoint {path} parameter names do not match "
                              f"the configuration (missing {missing}, extra {extra})")
    for name, param in expected.items():
        stored = arrays[name]
        if stored.shape != param.data.shape:
            raise CheckpointError(f"array {name!r} has shape {stored.shape}; "
                                  f"configuration expects {param.data.shape}")
        param.data = stored
    return model, scaler
