"""Binary checkpoint format.

Layout (all integers little-endian uint32)::

    b"TPCK" | version | metadata length | metadata (UTF-8 JSON)
    | tensor count | records... | CRC-32 of the record bytes

Each record is ``name length | name (UTF-8) | rank | dims... | float64 payload``.
"""
from __future__ import annotations

import json
import struct
import zlib
from pathlib import Path

import numpy as np

from ..errors import FormatError
from .layers import LayerSpec
from .model import ModelParams

MAGIC = b"TPCK"
VERSION = 1
_U32 = struct.Struct("<I")


def dumps(model: ModelParams) -> bytes:
    meta = {
        "layers": [s.to_dict() for s in model.layers],
        "n_classes": model.n_classes,
        "input_dim": model.input_dim,
        "seed": model.seed,
        "config": model.config,
    }
    meta_bytes = json.dumps(meta, sort_keys=True).encode("utf-8")
    records = bytearray()
    for name in sorted(model.params):
        arr = np.ascontiguousarray(model.params[name], dtype="<f8")
        nb = name.encode("utf-8")
        records += _U32.pack(len(nb)) + nb + _U32.pack(arr.ndim)
        records += b"".join(_U32.pack(n) for n in arr.shape)
        records += arr.tobytes()
    head = MAGIC + _U32.pack(VERSION) + _U32.pack(len(meta_bytes)) + meta_bytes
    return bytes(head + _U32.pack(len(model.params)) + records + _U32.pack(zlib.crc32(records)))


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise FormatError("checkpoint is truncated")
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def u32(self) -> int:
        return _U32.unpack(self.take(4))[0]


def loads(buf: bytes) -> ModelParams:
    r = _Reader(buf)
    if r.take(4) != MAGIC:
        raise FormatError("not a tpool checkpoint (bad magic)")
    version = r.u32()
    if version != VERSION:
        raise FormatError(f"unsupported checkpoint version {version} (expected {VERSION})")
    try:
        meta = json.loads(r.take(r.u32()).decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"corrupt checkpoint metadata: {exc}") from None
    count = r.u32()
    start = r.pos
    params = {}
    for _ in range(count):
        name = r.take(r.u32()).decode("utf-8")
        shape = tuple(r.u32() for _ in range(r.u32()))
        n = int(np.prod(shape, dtype=np.int64))
        params[name] = np.frombuffer(r.take(8 * n), dtype="<f8").reshape(shape).astype(np.float64)
    records = buf[start:r.pos]
    crc = r.u32()
    if r.pos != len(buf):
        raise FormatError("trailing bytes after checkpoint")
    if zlib.crc32(records) != crc:
        raise FormatError("checkpoint checksum mismatch")
    try:
        return ModelParams([LayerSpec.from_dict(s) for s in meta["layers"]], params,
                           int(meta["n_classes"]), int(meta["input_dim"]), int(meta["seed"]),
                           meta.get("config", {}))
    except (KeyError, TypeError) as exc:
        raise FormatError(f"checkpoint metadata incomplete: {exc}") from None


def save_model(model: ModelParams, path) -> None:
    Path(path).write_bytes(dumps(model))


def load_model(path) -> ModelParams:
    return loads(Path(path).read_bytes())
