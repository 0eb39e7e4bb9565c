"""Versioned flat binary container for skins and model parameters.

Layout (little-endian)::

    magic        8 bytes
    version      uint16
    header_len   uint32
    header       header_len bytes of UTF-8 JSON (sorted keys)
    arrays       float64 data, concatenated in header["arrays"] order

``header["arrays"]`` lists ``{"name": str, "shape": [int, ...]}`` entries.
Output is byte-stable for identical inputs.
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .errors import BadFile

_PREFIX = struct.Struct("<8sHI")


def dump(path, magic: bytes, version: int, meta: dict, arrays: dict[str, np.ndarray]) -> None:
    if len(magic) != 8:
        raise ValueError("magic must be 8 bytes")
    header = dict(meta)
    header["arrays"] = [{"name": k, "shape": list(np.shape(v))} for k, v in arrays.items()]
    hb = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    with open(path, "wb") as f:
        f.write(_PREFIX.pack(magic, version, len(hb)))
        f.write(hb)
        for v in arrays.values():
            f.write(np.ascontiguousarray(v, dtype="<f8").tobytes())


def load(path, magic: bytes, max_version: int) -> tuple[int, dict, dict[str, np.ndarray]]:
    data = Path(path).read_bytes()
    if len(data) < _PREFIX.size:
        raise BadFile(f"{path}: too short")
    got_magic, version, hlen = _PREFIX.unpack_from(data)
    if got_magic != magic:
        raise BadFile(f"{path}: bad magic {got_magic!r}")
    if version < 1 or version > max_version:
        raise BadFile(f"{path}: unsupported version {version}")
    off = _PREFIX.size
    try:
        header = json.loads(data[off:off + hlen].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise BadFile(f"{path}: unreadable header") from exc
    off += hlen
    arrays = {}
    for spec in header.pop("arrays"):
        shape = tuple(spec["shape"])
        n = int(np.prod(shape, dtype=np.int64))
        end = off + 8 * n
        if end > len(data):
            raise BadFile(f"{path}: truncated array {spec['name']}")
        arrays[spec["name"]] = np.frombuffer(data[off:end], dtype="<f8").reshape(shape).astype(float)
        off = end
    if off != len(data):
        raise BadFile(f"{path}: {len(data) - off} trailing bytes")
    return version, header, arrays
