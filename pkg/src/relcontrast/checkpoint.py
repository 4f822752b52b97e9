"""Versioned checkpoint container.

Layout (all integers little-endian)::

    magic      8 bytes   b"RCCKPT\\r\\n"
    version    u32
    length     u64       size of the manifest in bytes
    manifest   JSON      config, step, RNG state, tensor directory, payload sha256
    payload    float64   tensors back to back, little-endian, C order

Files are written to a temporary sibling and renamed into place, so a
reader never sees a partial checkpoint.
"""
from __future__ import annotations

import hashlib
import json
import os
import struct
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import CorruptPayload, IoError, VersionMismatch

MAGIC = b"RCCKPT\r\n"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<8sIQ")


@dataclass
class Checkpoint:
    tensors: dict[str, np.ndarray]
    manifest: dict = field(default_factory=dict)

    @property
    def config_hash(self) -> str | None:
        return self.manifest.get("config_hash")


def save_checkpoint(ckpt: Checkpoint, path: str | os.PathLike) -> None:
    path = Path(path)
    chunks, directory, offset = [], [], 0
    for name, arr in ckpt.tensors.items():
        data = np.ascontiguousarray(arr, dtype="<f8").tobytes()
        directory.append({"name": name, "shape": list(np.shape(arr)), "offset": offset, "nbytes": len(data)})
        chunks.append(data)
        offset += len(data)
    payload = b"".join(chunks)
    manifest = dict(ckpt.manifest)
    manifest["format_version"] = FORMAT_VERSION
    manifest["tensors"] = directory
    manifest["payload_sha256"] = hashlib.sha256(payload).hexdigest()
    head = json.dumps(manifest, sort_keys=True).encode("utf-8")
    blob = _HEADER.pack(MAGIC, FORMAT_VERSION, len(head)) + head + payload
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
        with os.fdopen(fd, "wb") as fh:
            fh.write(blob)
        os.replace(tmp, path)
    except OSError as exc:
        raise IoError(str(exc)) from exc


def load_checkpoint(path: str | os.PathLike) -> Checkpoint:
    try:
        blob = Path(path).read_bytes()
    except OSError as exc:
        raise IoError(str(exc)) from exc
    if len(blob) < _HEADER.size:
        raise CorruptPayload(f"{path}: truncated header")
    magic, version, length = _HEADER.unpack_from(blob)
    if magic != MAGIC:
        raise CorruptPayload(f"{path}: not a checkpoint file")
    if version != FORMAT_VERSION:
        raise VersionMismatch(f"{path}: format version {version}, expected {FORMAT_VERSION}")
    start = _HEADER.size
    if len(blob) < start + length:
        raise CorruptPayload(f"{path}: truncated manifest")
    try:
        manifest = json.loads(blob[start:start + length].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CorruptPayload(f"{path}: unreadable manifest") from exc
    payload = blob[start + length:]
    if hashlib.sha256(payload).hexdigest() != manifest.get("payload_sha256"):
        raise CorruptPayload(f"{path}: payload checksum mismatch")
    tensors = {}
    for entry in manifest["tensors"]:
        raw = payload[entry["offset"]:entry["offset"] + entry["nbytes"]]
        tensors[entry["name"]] = np.frombuffer(raw, dtype="<f8").astype(np.float64).reshape(entry["shape"])
    return Checkpoint(tensors, manifest)
