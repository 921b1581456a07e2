"""Single-file checkpoint container.

Layout: 4 magic bytes, u32 format version, u64 header length, UTF-8 JSON
header, then raw little-endian float32 blobs concatenated in header order.
The header's "blobs" list records each blob's name, shape, and SHA-256,
verified on read.
"""

from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

import numpy as np

FORMAT_VERSION = 1


class CheckpointError(Exception):
    """Unreadable, corrupted, or incompatible checkpoint."""


def write_container(
    path: str | Path, magic: bytes, header: dict, blobs: dict[str, np.ndarray]
) -> None:
    if len(magic) != 4:
        raise ValueError("magic must be 4 bytes")
    blob_index = []
    payload = bytearray()
    for name, arr in blobs.items():
        raw = np.ascontiguousarray(arr, dtype="<f4").tobytes()
        blob_index.append(
            {
                "name": name,
                "shape": list(arr.shape),
                "sha256": hashlib.sha256(raw).hexdigest(),
            }
        )
        payload += raw
    full_header = dict(header)
    full_header["blobs"] = blob_index
    header_bytes = json.dumps(full_header, sort_keys=True).encode("utf-8")

    with open(path, "wb") as f:
        f.write(magic)
        f.write(struct.pack("<I", FORMAT_VERSION))
        f.write(struct.pack("<Q", len(header_bytes)))
        f.write(header_bytes)
        f.write(bytes(payload))


def read_container(path: str | Path, magic: bytes) -> tuple[dict, dict[str, np.ndarray]]:
    data = Path(path).read_bytes()
    if len(data) < 16:
        raise CheckpointError(f"truncated checkpoint {path}")
    if data[:4] != magic:
        raise CheckpointError(
            f"bad magic {data[:4]!r} in {path} (expected {magic!r})"
        )
    version = struct.unpack("<I", data[4:8])[0]
    if version != FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    hlen = struct.unpack("<Q", data[8:16])[0]
    if len(data) < 16 + hlen:
        raise CheckpointError(f"truncated checkpoint header in {path}")
    header = json.loads(data[16 : 16 + hlen].decode("utf-8"))

    blobs = {}
    offset = 16 + hlen
    for entry in header["blobs"]:
        n = int(np.prod(entry["shape"])) if entry["shape"] else 1
        nbytes = n * 4
        raw = data[offset : offset + nbytes]
        if len(raw) != nbytes:
            raise CheckpointError(f"truncated blob {entry['name']} in {path}")
        if hashlib.sha256(raw).hexdigest() != entry["sha256"]:
            raise CheckpointError(f"checksum mismatch for blob {entry['name']} in {path}")
        blobs[entry["name"]] = np.frombuffer(raw, dtype="<f4").reshape(entry["shape"]).copy()
        offset += nbytes
    return header, blobs
