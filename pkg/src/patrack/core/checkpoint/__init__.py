"""
Checkpoint - Binary parameter store.

Layout:
- magic "PATK" (4 bytes)
- format version, u32 little-endian
- manifest length, u64 little-endian
- manifest: canonical JSON (sorted keys) with per-tensor dtype, shape, offset,
  length, frozen flag and CRC32 digest, plus free-form metadata
- payload: little-endian float32, tensors in sorted-name order

Every tensor digest is verified on load.
"""

from __future__ import annotations

import json
import os
import struct
import threading
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from patrack.exceptions import IntegrityException, ParseException, StorageException

MAGIC = b"PATK"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<4sIQ")
_PAYLOAD_DTYPE = np.dtype("<f4")

_write_lock = threading.Lock()


@dataclass
class Checkpoint:
    """Named float32 tensors with freeze flags and run metadata."""

    tensors: dict[str, np.ndarray]
    frozen: set[str] = field(default_factory=set)
    metadata: dict[str, Any] = field(default_factory=dict)

    def digests(self) -> dict[str, int]:
        return {name: tensor_digest(arr) for name, arr in self.tensors.items()}


def tensor_digest(array: np.ndarray) -> int:
    """CRC32 of the tensor's float32 little-endian bytes."""
    return zlib.crc32(np.ascontiguousarray(array, dtype=_PAYLOAD_DTYPE).tobytes())


def encode_checkpoint(checkpoint: Checkpoint) -> bytes:
    entries: dict[str, dict[str, Any]] = {}
    chunks: list[bytes] = []
    offset = 0
    for name in sorted(checkpoint.tensors):
        raw = np.ascontiguousarray(checkpoint.tensors[name], dtype=_PAYLOAD_DTYPE).tobytes()
        entries[name] = {
            "dtype": "float32",
            "shape": list(np.shape(checkpoint.tensors[name])),
            "offset": offset,
            "length": len(raw),
            "frozen": name in checkpoint.frozen,
            "digest": zlib.crc32(raw),
        }
        chunks.append(raw)
        offset += len(raw)
    manifest = json.dumps(
        {"tensors": entries, "metadata": checkpoint.metadata},
        sort_keys=True,
        separators=(",", ":"),
    ).encode("utf-8")
    return _HEADER.pack(MAGIC, FORMAT_VERSION, len(manifest)) + manifest + b"".join(chunks)


def _entry_fields(source: str, name: str, entry: Any) -> tuple[int, int, int, tuple[int, ...]]:
    """(offset, length, digest, shape) of one manifest entry."""
    try:
        return (
            int(entry["offset"]),
            int(entry["length"]),
            int(entry["digest"]),
            tuple(int(d) for d in entry["shape"]),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseException(source, f"manifest entry '{name}' is malformed: {exc!r}") from exc


def decode_checkpoint(blob: bytes, source: str = "<memory>") -> Checkpoint:
    if len(blob) < _HEADER.size:
        raise ParseException(source, "truncated header")
    magic, version, manifest_len = _HEADER.unpack_from(blob)
    if magic != MAGIC:
        raise ParseException(source, f"bad magic {magic!r}")
    if version != FORMAT_VERSION:
        raise ParseException(source, f"unsupported format version {version}")
    start = _HEADER.size
    try:
        manifest = json.loads(blob[start : start + manifest_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ParseException(source, f"manifest is not valid JSON: {exc}") from exc
    if not isinstance(manifest, dict) or not isinstance(manifest.get("tensors", {}), dict):
        raise ParseException(source, "manifest must map 'tensors' to an object")

    payload = blob[start + manifest_len :]
    entries: dict[str, Any] = manifest.get("tensors", {})
    fields = {name: _entry_fields(source, name, entry) for name, entry in entries.items()}
    expected = sum(length for _, length, _, _ in fields.values())
    if expected != len(payload):
        raise ParseException(source, f"payload is {len(payload)} bytes, manifest declares {expected}")

    tensors: dict[str, np.ndarray] = {}
    frozen: set[str] = set()
    for name, (offset, length, digest, shape) in fields.items():
        raw = payload[offset : offset + length]
        actual = zlib.crc32(raw)
        if actual != digest:
            raise IntegrityException(source, name, digest, actual)
        try:
            tensors[name] = np.frombuffer(raw, dtype=_PAYLOAD_DTYPE).astype(np.float32).reshape(shape)
        except ValueError as exc:
            raise ParseException(source, f"tensor '{name}' does not fit shape {list(shape)}") from exc
        if entries[name].get("frozen"):
            frozen.add(name)
    return Checkpoint(tensors=tensors, frozen=frozen, metadata=manifest.get("metadata", {}))


def save_checkpoint(path: str | Path, checkpoint: Checkpoint) -> Path:
    """Write atomically (temp file + rename); writers are serialized."""
    path = Path(path)
    blob = encode_checkpoint(checkpoint)
    tmp = path.with_name(path.name + ".tmp")
    with _write_lock:
        try:
            path.parent.mkdir(parents=True, exist_ok=True)
            tmp.write_bytes(blob)
            os.replace(tmp, path)
        except OSError as exc:
            raise StorageException(str(path), f"cannot write checkpoint: {exc.strerror}") from exc
    return path


def load_checkpoint(path: str | Path) -> Checkpoint:
    path = Path(path)
    try:
        blob = path.read_bytes()
    except OSError as exc:
        raise StorageException(str(path), f"cannot read checkpoint: {exc.strerror}") from exc
    return decode_checkpoint(blob, source=str(path))


__all__ = [
    "Checkpoint",
    "decode_checkpoint",
    "encode_checkpoint",
    "load_checkpoint",
    "save_checkpoint",
    "tensor_digest",
]
