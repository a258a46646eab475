"""Flat binary checkpoint container.

Layout (all integers little-endian)::

    magic      8 bytes   b"GLNCKPT1"
    hlen       uint32    length of the header
    header     hlen      UTF-8 JSON, sorted keys (model config + metadata)
    count      uint32    number of parameter blocks
    per block:
      nlen     uint16    name length
      name     nlen      UTF-8
      dtype    uint8     1 = float32, 2 = float64
      ndim     uint8
      dims     ndim x uint32
      data     IEEE-754 little-endian, C order
"""

from __future__ import annotations

import io
import json
import os
import struct
from pathlib import Path
from typing import Any

import numpy as np

from .model import ModelConfig, Params

MAGIC = b"GLNCKPT1"
_DTYPES = {1: np.dtype("<f4"), 2: np.dtype("<f8")}
_CODES = {np.dtype("float32"): 1, np.dtype("float64"): 2}


class CheckpointError(ValueError):
    pass


def dumps(params: Params, cfg: ModelConfig, meta: dict[str, Any] | None = None) -> bytes:
    header = json.dumps({"config": cfg.to_dict(), "meta": meta or {}}, sort_keys=True, separators=(",", ":"))
    hb = header.encode("utf-8")
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<I", len(hb)))
    buf.write(hb)
    buf.write(struct.pack("<I", len(params)))
    for name in sorted(params):
        arr = params[name]
        code = _CODES.get(arr.dtype)
        if code is None:
            raise CheckpointError(f"parameter {name} has unsupported dtype {arr.dtype}")
        nb = name.encode("utf-8")
        buf.write(struct.pack("<H", len(nb)))
        buf.write(nb)
        buf.write(struct.pack("<BB", code, arr.ndim))
        buf.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        buf.write(np.ascontiguousarray(arr, dtype=_DTYPES[code]).tobytes())
    return buf.getvalue()


def loads(data: bytes) -> tuple[Params, ModelConfig, dict]:
    view = memoryview(data)
    if bytes(view[:8]) != MAGIC:
        raise CheckpointError("not a checkpoint (bad magic bytes)")
    pos = 8

    def take(n):
        nonlocal pos
        if pos + n > len(view):
            raise CheckpointError("truncated checkpoint")
        out = view[pos : pos + n]
        pos += n
        return out

    (hlen,) = struct.unpack("<I", take(4))
    header = json.loads(bytes(take(hlen)).decode("utf-8"))
    cfg = ModelConfig(**header["config"])
    (count,) = struct.unpack("<I", take(4))
    params: Params = {}
    for _ in range(count):
        (nlen,) = struct.unpack("<H", take(2))
        name = bytes(take(nlen)).decode("utf-8")
        code, ndim = struct.unpack("<BB", take(2))
        if code not in _DTYPES:
            raise CheckpointError(f"unknown dtype code {code} for {name}")
        shape = struct.unpack(f"<{ndim}I", take(4 * ndim))
        dt = _DTYPES[code]
        n = int(np.prod(shape)) * dt.itemsize
        params[name] = np.frombuffer(bytes(take(n)), dtype=dt).reshape(shape).astype(dt.newbyteorder("="))
    if pos != len(view):
        raise CheckpointError("trailing bytes after last parameter block")
    return params, cfg, header["meta"]


def save(path, params: Params, cfg: ModelConfig, meta: dict | None = None) -> Path:
    """Write atomically (temp file + rename)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(dumps(params, cfg, meta))
    os.replace(tmp, path)
    return path


def load(path) -> tuple[Params, ModelConfig, dict]:
    return loads(Path(path).read_bytes())


def describe(params: Params) -> str:
    """One line per parameter: name, shape, L2 norm."""
    lines = []
    for name in sorted(params):
        a = params[name]
        lines.append(f"{name:<28} {str(tuple(a.shape)):<14} {float(np.linalg.norm(a.astype(np.float64))):.6f}")
    return "\n".join(lines) + "\n"
