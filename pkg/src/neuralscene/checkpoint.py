"""Versioned, checksummed binary checkpoints.

Layout::

    MAGIC (8 bytes) | version (u32 LE) | header length (u64 LE) | header JSON
    | array payload | SHA-256 of everything before it (32 bytes)

The header lists each array's name, dtype, shape and payload offset plus a
free-form JSON ``meta`` section. Serialization is canonical (sorted keys,
arrays in name order), so save -> load -> save reproduces the same bytes.
"""
from __future__ import annotations

import hashlib
import json
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

MAGIC = b"NSCKPT\x00\x01"
FORMAT_VERSION = 1
_DIGEST = 32


class CheckpointIntegrityError(RuntimeError):
    """File is truncated, corrupt, or fails its checksum."""


class CheckpointVersionError(RuntimeError):
    """File was written by an incompatible format version."""


@dataclass
class Checkpoint:
    arrays: dict[str, np.ndarray] = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    def equals(self, other: "Checkpoint") -> bool:
        if self.meta != other.meta or set(self.arrays) != set(other.arrays):
            return False
        return all(a.dtype == other.arrays[k].dtype and a.shape == other.arrays[k].shape
                   and a.tobytes() == other.arrays[k].tobytes() for k, a in self.arrays.items())


def to_bytes(ckpt: Checkpoint) -> bytes:
    entries, blobs, offset = [], [], 0
    for name in sorted(ckpt.arrays):
        arr = np.asarray(ckpt.arrays[name], order="C")
        dt = arr.dtype.newbyteorder("<") if arr.dtype.byteorder == ">" else arr.dtype
        raw = arr.astype(dt, copy=False).tobytes()
        entries.append({"name": name, "dtype": dt.str, "shape": list(arr.shape),
                        "offset": offset, "nbytes": len(raw)})
        blobs.append(raw)
        offset += len(raw)
    header = json.dumps({"arrays": entries, "meta": ckpt.meta}, sort_keys=True,
                        separators=(",", ":")).encode("utf-8")
    body = MAGIC + struct.pack("<IQ", FORMAT_VERSION, len(header)) + header + b"".join(blobs)
    return body + hashlib.sha256(body).digest()


def from_bytes(buf: bytes, source: str = "<bytes>") -> Checkpoint:
    fixed = len(MAGIC) + 12
    if len(buf) < fixed + _DIGEST or buf[:len(MAGIC)] != MAGIC:
        raise CheckpointIntegrityError(f"{source}: not a checkpoint or truncated")
    version, hlen = struct.unpack("<IQ", buf[len(MAGIC):fixed])
    if version != FORMAT_VERSION:
        raise CheckpointVersionError(
            f"{source}: checkpoint format version {version}, this build reads {FORMAT_VERSION}")
    body, digest = buf[:-_DIGEST], buf[-_DIGEST:]
    if hashlib.sha256(body).digest() != digest:
        raise CheckpointIntegrityError(f"{source}: checksum mismatch (corrupt or truncated)")
    try:
        header = json.loads(body[fixed:fixed + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointIntegrityError(f"{source}: unreadable header") from exc
    payload = body[fixed + hlen:]
    arrays = {}
    for e in header["arrays"]:
        raw = payload[e["offset"]:e["offset"] + e["nbytes"]]
        if len(raw) != e["nbytes"]:
            raise CheckpointIntegrityError(f"{source}: array {e['name']} is truncated")
        arrays[e["name"]] = np.frombuffer(raw, dtype=np.dtype(e["dtype"])).reshape(tuple(e["shape"])).copy()
    return Checkpoint(arrays, header["meta"])


def save_checkpoint(path, ckpt: Checkpoint) -> Path:
    """Write atomically (temp file + rename)."""
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as f:
        f.write(to_bytes(ckpt))
    os.replace(tmp, path)
    return path


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as f:
        buf = f.read()
    return from_bytes(buf, os.fspath(path))
