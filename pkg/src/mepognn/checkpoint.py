"""Versioned binary checkpoint container.

Layout::

    8 bytes   magic  b"MEPOCKPT"
    4 bytes   format version, uint32 little-endian
    8 bytes   header length in bytes, uint64 little-endian
    header    UTF-8 JSON (sorted keys): config echo, scaler statistics,
              model constants and the block table [{name, shape, offset, count}]
    payload   every block as raw little-endian float64, in block-table order

Offsets are counted in float64 elements from the start of the payload.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"MEPOCKPT"
VERSION = 1
_LE_F64 = np.dtype("<f8")


class CheckpointError(ValueError):
    pass


def dumps(blocks: dict[str, np.ndarray], meta: dict) -> bytes:
    table, offset, chunks = [], 0, []
    for name, value in blocks.items():
        arr = np.ascontiguousarray(value, dtype=_LE_F64)
        table.append({"name": name, "shape": list(arr.shape), "offset": offset, "count": int(arr.size)})
        offset += arr.size
        chunks.append(arr.tobytes())
    header = dict(meta)
    header["blocks"] = table
    raw = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return MAGIC + struct.pack("<IQ", VERSION, len(raw)) + raw + b"".join(chunks)


def loads(data: bytes) -> tuple[dict[str, np.ndarray], dict]:
    if data[:8] != MAGIC:
        raise CheckpointError("not a checkpoint file (bad magic)")
    if len(data) < 20:
        raise CheckpointError("truncated checkpoint header")
    version, hlen = struct.unpack("<IQ", data[8:20])
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version} (expected {VERSION})")
    try:
        header = json.loads(data[20:20 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"corrupt checkpoint header: {exc}") from None
    payload = np.frombuffer(data, dtype=_LE_F64, offset=20 + hlen)
    blocks = {}
    for b in header.pop("blocks"):
        lo, n = b["offset"], b["count"]
        if lo + n > payload.size:
            raise CheckpointError(f"block {b['name']} runs past the end of the file")
        blocks[b["name"]] = payload[lo:lo + n].astype(np.float64).reshape(b["shape"])
    return blocks, header


def save(path, blocks: dict[str, np.ndarray], meta: dict) -> Path:
    path = Path(path)
    path.write_bytes(dumps(blocks, meta))
    return path


def load(path) -> tuple[dict[str, np.ndarray], dict]:
    return loads(Path(path).read_bytes())
