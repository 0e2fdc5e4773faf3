"""Single-file checkpoints: JSON manifest followed by raw float32 payloads.

Layout::

    b"CCKP"            4-byte magic
    u32 LE             format version
    u64 LE             manifest length in bytes
    manifest           UTF-8 JSON
    payload            little-endian float32 arrays, offsets relative to payload start
"""
import json
import os
import struct

import numpy as np

MAGIC = b"CCKP"
VERSION = 1
_HEADER = struct.Struct("<4sIQ")


class CheckpointError(ValueError):
    pass


def save_checkpoint(path, tensors, meta=None):
    """Write ``tensors`` (name -> array) and a JSON-able ``meta`` dict to ``path``."""
    entries, chunks, offset = [], [], 0
    for name, arr in tensors.items():
        a = np.ascontiguousarray(arr, dtype="<f4")
        entries.append({"name": name, "shape": list(a.shape), "dtype": "float32", "offset": offset, "nbytes": a.nbytes})
        chunks.append(a.tobytes())
        offset += a.nbytes
    manifest = json.dumps({"tensors": entries, "meta": meta or {}}, sort_keys=True).encode("utf-8")
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, VERSION, len(manifest)))
        fh.write(manifest)
        for c in chunks:
            fh.write(c)
    os.replace(tmp, path)


def read_manifest(path):
    with open(path, "rb") as fh:
        head = fh.read(_HEADER.size)
        if len(head) < _HEADER.size:
            raise CheckpointError(f"{path}: truncated header")
        magic, version, mlen = _HEADER.unpack(head)
        if magic != MAGIC:
            raise CheckpointError(f"{path}: bad magic {magic!r}")
        if version != VERSION:
            raise CheckpointError(f"{path}: unsupported version {version}")
        raw = fh.read(mlen)
        if len(raw) < mlen:
            raise CheckpointError(f"{path}: truncated manifest")
    return json.loads(raw.decode("utf-8")), _HEADER.size + mlen


def load_checkpoint(path):
    """Return ``(tensors, meta)``; tensors are float32 arrays."""
    manifest, start = read_manifest(path)
    with open(path, "rb") as fh:
        fh.seek(start)
        payload = fh.read()
    tensors = {}
    for e in manifest["tensors"]:
        lo, hi = e["offset"], e["offset"] + e["nbytes"]
        if hi > len(payload):
            raise CheckpointError(f"{path}: payload for {e['name']} is truncated")
        tensors[e["name"]] = np.frombuffer(payload[lo:hi], dtype="<f4").reshape(e["shape"]).astype(np.float32)
    return tensors, manifest["meta"]
