"""Checkpoint files: named float32 tensors behind a JSON header.

Byte layout (all integers little-endian)::

    offset  size  field
    0       4     magic b"IVCK"
    4       2     u16 format version (1)
    6       4     u32 header length H in bytes
    10      H     UTF-8 JSON header, keys sorted, no whitespace
    10+H    ...   payload: float32 little-endian values, tensors back to back

The header object has ``model_kind`` (str), ``model_spec`` (object),
``meta`` (object) and ``tensors``: a list of ``{"name", "shape",
"offset", "count"}`` where ``offset`` counts float32 values from the start
of the payload. Tensors appear in the order given by the caller.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from ..errors import CheckpointError, MissingCheckpoint

MAGIC = b"IVCK"
VERSION = 1
_PREFIX = struct.Struct("<4sHI")


def encode_checkpoint(
    tensors: dict[str, np.ndarray],
    model_kind: str,
    model_spec: dict,
    meta: dict | None = None,
) -> bytes:
    table = []
    offset = 0
    payload = []
    for name, arr in tensors.items():
        arr = np.ascontiguousarray(arr, dtype="<f4")
        table.append({"name": name, "shape": list(arr.shape), "offset": offset, "count": int(arr.size)})
        offset += arr.size
        payload.append(arr.tobytes())
    header = {"model_kind": model_kind, "model_spec": model_spec, "meta": meta or {}, "tensors": table}
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return _PREFIX.pack(MAGIC, VERSION, len(blob)) + blob + b"".join(payload)


def decode_checkpoint(data: bytes) -> tuple[dict[str, np.ndarray], dict]:
    """Return (tensors as float64 arrays, header dict)."""
    if len(data) < _PREFIX.size:
        raise CheckpointError("checkpoint shorter than its fixed prefix")
    magic, version, hlen = _PREFIX.unpack_from(data)
    if magic != MAGIC:
        raise CheckpointError(f"bad checkpoint magic {magic!r}")
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    start = _PREFIX.size + hlen
    try:
        header = json.loads(data[_PREFIX.size:start].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"unreadable checkpoint header: {exc}") from None
    payload = np.frombuffer(data, dtype="<f4", offset=start)
    tensors = {}
    for entry in header["tensors"]:
        lo, n = entry["offset"], entry["count"]
        if lo + n > payload.size:
            raise CheckpointError(f"tensor {entry['name']!r} runs past the end of the payload")
        tensors[entry["name"]] = payload[lo:lo + n].astype(np.float64).reshape(entry["shape"])
    if sum(e["count"] for e in header["tensors"]) != payload.size:
        raise CheckpointError("payload size does not match the tensor table")
    return tensors, header


def save_checkpoint(path: str | Path, tensors, model_kind, model_spec, meta=None) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(encode_checkpoint(tensors, model_kind, model_spec, meta))


def load_checkpoint(path: str | Path) -> tuple[dict[str, np.ndarray], dict]:
    path = Path(path)
    if not path.exists():
        raise MissingCheckpoint(f"no checkpoint at {path}")
    return decode_checkpoint(path.read_bytes())
