"""NVPM model container: magic, version, config JSON, then raw parameters.

Every array is stored as little-endian float32 in the order reported by
model.arrays(), which the config fully determines, so the format is
self-describing and the roundtrip is bit-exact in 32-bit mode.
"""

from __future__ import annotations

import json
import struct

import numpy as np

from . import precision
from .model import ModelConfig, build_model

NVPM_MAGIC = b"NVPM"
NVPM_VERSION = 1


class FormatError(ValueError):
    """Malformed container; the message carries the failing byte offset."""


class Reader:
    """Bounds-checked little-endian cursor over a byte string."""

    def __init__(self, blob: bytes, label: str):
        self.blob = blob
        self.pos = 0
        self.label = label

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.blob):
            raise FormatError(
                f"{self.label}: truncated at byte offset {self.pos} "
                f"(needed {n} more bytes, have {len(self.blob) - self.pos})"
            )
        out = self.blob[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        vals = struct.unpack("<" + fmt, self.take(struct.calcsize("<" + fmt)))
        return vals[0] if len(vals) == 1 else vals

    def expect_end(self) -> None:
        if self.pos != len(self.blob):
            raise FormatError(
                f"{self.label}: {len(self.blob) - self.pos} trailing bytes at offset {self.pos}"
            )


def _config_blob(config: ModelConfig) -> bytes:
    return json.dumps(config.to_dict(), sort_keys=True).encode()


def _read_header(r: Reader, magic: bytes, version: int) -> ModelConfig:
    found = r.take(4)
    if found != magic:
        raise FormatError(f"{r.label}: bad magic {found!r} at offset 0, expected {magic!r}")
    v = r.unpack("B")
    if v != version:
        raise FormatError(f"{r.label}: unsupported version {v} at offset 4")
    cfg_len = r.unpack("I")
    try:
        return ModelConfig.from_dict(json.loads(r.take(cfg_len)))
    except (ValueError, TypeError) as e:
        raise FormatError(f"{r.label}: bad config record: {e}") from e


def serialize(model) -> bytes:
    cfg = _config_blob(model.config)
    parts = [NVPM_MAGIC, struct.pack("<BI", NVPM_VERSION, len(cfg)), cfg]
    for _, arr in model.arrays():
        parts.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    return b"".join(parts)


def deserialize(blob: bytes, label: str = "NVPM"):
    r = Reader(blob, label)
    config = _read_header(r, NVPM_MAGIC, NVPM_VERSION)
    model = build_model(config)
    dt = precision.dtype()
    for name, arr in model.arrays():
        raw = r.take(arr.size * 4)
        arr[...] = np.frombuffer(raw, dtype="<f4").reshape(arr.shape).astype(dt, copy=False)
    r.expect_end()
    return model


def save_model(model, path) -> None:
    with open(path, "wb") as f:
        f.write(serialize(model))


def load_model(path):
    with open(path, "rb") as f:
        return deserialize(f.read(), label=str(path))
