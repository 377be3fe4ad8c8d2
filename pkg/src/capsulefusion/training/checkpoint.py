"""Self-describing binary checkpoints.

Layout, all integers little-endian::

    b"SSLF"  u16 version  u8 kind
    u32 header length, UTF-8 JSON {"kind", "config", "metadata", "tensors"}
        ("tensors" lists [name, shape] in table order)
    u32 tensor count, then per tensor:
        u16 name length, UTF-8 name, u8 rank, rank × u64 dims, float32 data
    u64 checksum (first 8 bytes of SHA-256 over everything before it)
"""
from __future__ import annotations

import hashlib
import json
import logging
import math
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping

import numpy as np

from ..errors import (
    BadMagicError,
    ChecksumError,
    ConfigMismatchError,
    KindMismatchError,
    TruncatedCheckpointError,
    VersionMismatchError,
)
from ..nn import Module
from .adam import AdamState

log = logging.getLogger("capsulefusion.checkpoint")

MAGIC = b"SSLF"
FORMAT_VERSION = 1
CHECKSUM_BYTES = 8
# magic, version, kind, header length, tensor count, checksum
MIN_SIZE = len(MAGIC) + 3 + 4 + 4 + CHECKSUM_BYTES
KIND_TAGS = {"unet": 1, "backbone": 2, "fused": 3}
_KIND_NAMES = {tag: kind for kind, tag in KIND_TAGS.items()}
_OPT_PREFIX = ("adam.m.", "adam.v.")


@dataclass
class Checkpoint:
    kind: str
    config: dict[str, Any]
    tensors: dict[str, np.ndarray]
    metadata: dict[str, Any] = field(default_factory=dict)
    optimizer: AdamState | None = None

    def __post_init__(self):
        if self.kind not in KIND_TAGS:
            raise KindMismatchError(f"unknown checkpoint kind {self.kind!r}", kind=self.kind)

    def restore(self, model: Module) -> Module:
        model.load_state_dict(self.tensors)
        return model


def snapshot(model: Module, kind: str, config: Mapping[str, Any], metadata: Mapping[str, Any] | None = None,
             optimizer: AdamState | None = None) -> Checkpoint:
    """Copy the model's parameters, buffers and (optionally) optimizer moments."""
    tensors = {name: np.array(value, copy=True) for name, value in model.state_dict().items()}
    opt = None
    if optimizer is not None:
        opt = AdamState(
            m={k: v.copy() for k, v in optimizer.m.items()},
            v={k: v.copy() for k, v in optimizer.v.items()},
            t=optimizer.t,
        )
    return Checkpoint(kind, dict(config), tensors, dict(metadata or {}), opt)


def _jsonable(value):
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, np.ndarray):
        return value.tolist()
    return value


def encode_checkpoint(checkpoint: Checkpoint) -> bytes:
    metadata = dict(checkpoint.metadata)
    tensors = dict(checkpoint.tensors)
    if checkpoint.optimizer is not None:
        metadata["optimizer_step"] = checkpoint.optimizer.t
        tensors.update({f"adam.m.{k}": v for k, v in checkpoint.optimizer.m.items()})
        tensors.update({f"adam.v.{k}": v for k, v in checkpoint.optimizer.v.items()})
    arrays = {name: np.ascontiguousarray(value, dtype="<f4") for name, value in tensors.items()}
    header = json.dumps(
        _jsonable({
            "kind": checkpoint.kind,
            "config": checkpoint.config,
            "metadata": metadata,
            "tensors": [[name, list(array.shape)] for name, array in arrays.items()],
        }),
        sort_keys=True, separators=(",", ":"),
    ).encode("utf-8")

    parts = [MAGIC, struct.pack("<HB", FORMAT_VERSION, KIND_TAGS[checkpoint.kind]),
             struct.pack("<I", len(header)), header, struct.pack("<I", len(arrays))]
    for name, array in arrays.items():
        raw_name = name.encode("utf-8")
        parts.append(struct.pack("<H", len(raw_name)))
        parts.append(raw_name)
        parts.append(struct.pack("<B", array.ndim))
        parts.append(struct.pack(f"<{array.ndim}Q", *array.shape))
        parts.append(array.tobytes())
    body = b"".join(parts)
    return body + _digest(body)


def _digest(body: bytes) -> bytes:
    return hashlib.sha256(body).digest()[:CHECKSUM_BYTES]


class _Reader:
    def __init__(self, raw: bytes, source: str):
        self.raw, self.pos, self.source = raw, 0, source

    @property
    def remaining(self) -> int:
        return len(self.raw) - self.pos

    def take(self, n: int) -> bytes:
        if n > self.remaining:
            raise TruncatedCheckpointError(
                f"{self.source}: truncated at byte {len(self.raw)} (needed {n - self.remaining} more)",
                path=self.source, offset=self.pos,
            )
        chunk = self.raw[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def _corrupt(source: str, what: str, **details) -> ChecksumError:
    return ChecksumError(f"{source}: checksum mismatch ({what})", path=source, **details)


def _is_complete_json(raw: bytes) -> bool:
    try:
        json.JSONDecoder().raw_decode(raw.decode("utf-8", errors="replace"))
    except json.JSONDecodeError:
        return False
    return True


def _contents(header: Any, source: str) -> list[tuple[str, tuple[int, ...]]]:
    entries = header.get("tensors") if isinstance(header, dict) else None
    if not isinstance(entries, list):
        raise _corrupt(source, "header has no tensor table")
    contents = []
    for entry in entries:
        ok = (isinstance(entry, list) and len(entry) == 2 and isinstance(entry[0], str)
              and isinstance(entry[1], list)
              and all(isinstance(d, int) and not isinstance(d, bool) and d >= 0 for d in entry[1]))
        if not ok:
            raise _corrupt(source, "malformed tensor table entry", entry=entry)
        contents.append((entry[0], tuple(entry[1])))
    return contents


def _read_body(raw: bytes, source: str) -> tuple[dict[str, Any], dict[str, np.ndarray], int]:
    """Walk the header and tensor table, cross-checking every length against the header's contents.

    Running out of bytes while everything read so far agrees is a truncation; any disagreement
    is corruption.
    """
    r = _Reader(raw, source)
    r.take(len(MAGIC) + 3)
    (header_len,) = r.unpack("<I")
    if header_len > r.remaining:
        if _is_complete_json(raw[r.pos :]):
            raise _corrupt(source, "header length overruns the file", header_len=header_len)
        r.take(header_len)
    try:
        header = json.loads(r.take(header_len).decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise _corrupt(source, f"unreadable header: {exc}") from exc
    contents = _contents(header, source)

    (count,) = r.unpack("<I")
    if count != len(contents):
        raise _corrupt(source, "tensor count disagrees with header", count=count, expected=len(contents))
    tensors: dict[str, np.ndarray] = {}
    for name, shape in contents:
        expected = name.encode("utf-8")
        (name_len,) = r.unpack("<H")
        if name_len != len(expected) or r.take(name_len) != expected:
            raise _corrupt(source, f"tensor name disagrees with header at {name!r}", tensor=name)
        (rank,) = r.unpack("<B")
        if rank != len(shape) or (r.unpack(f"<{rank}Q") if rank else ()) != shape:
            raise _corrupt(source, f"shape of {name!r} disagrees with header", tensor=name)
        data = r.take(4 * math.prod(shape))
        tensors[name] = np.frombuffer(data, dtype="<f4").reshape(shape).astype(np.float32)
    return header, tensors, r.pos


def decode_checkpoint(raw: bytes, source: str = "<bytes>", expected_kind: str | None = None) -> Checkpoint:
    """Parse checkpoint bytes.

    Errors are distinct: ``BadMagicError``, ``VersionMismatchError``, ``TruncatedCheckpointError``
    for a prefix of a valid file, and ``ChecksumError`` for any other altered byte.
    """
    if raw[: len(MAGIC)] != MAGIC:
        if len(raw) < len(MAGIC) and MAGIC.startswith(raw):
            raise TruncatedCheckpointError(f"{source}: truncated at byte {len(raw)}", path=source, offset=0)
        raise BadMagicError(f"{source}: not a checkpoint (magic {raw[:len(MAGIC)]!r})", path=source)
    if len(raw) < len(MAGIC) + 3:
        raise TruncatedCheckpointError(f"{source}: truncated at byte {len(raw)}", path=source, offset=len(raw))
    version, tag = struct.unpack_from("<HB", raw, len(MAGIC))
    if version != FORMAT_VERSION:
        raise VersionMismatchError(
            f"{source}: format version {version}, expected {FORMAT_VERSION}",
            path=source, version=version, expected=FORMAT_VERSION,
        )

    intact = len(raw) >= MIN_SIZE and _digest(raw[:-CHECKSUM_BYTES]) == raw[-CHECKSUM_BYTES:]
    header, tensors, body_end = _read_body(raw, source)
    expected_size = body_end + CHECKSUM_BYTES
    if len(raw) < expected_size:
        raise TruncatedCheckpointError(
            f"{source}: truncated at byte {len(raw)} (needed {expected_size - len(raw)} more)",
            path=source, offset=len(raw),
        )
    if len(raw) > expected_size:
        raise _corrupt(source, f"{len(raw) - expected_size} unexpected trailing bytes")
    if not intact:
        raise _corrupt(source, "stored digest differs")

    kind = _KIND_NAMES.get(tag)
    if kind is None or header.get("kind") != kind:
        raise KindMismatchError(f"{source}: kind tag {tag} does not match header", path=source, tag=tag)
    if expected_kind is not None and kind != expected_kind:
        raise KindMismatchError(
            f"{source}: holds a {kind} checkpoint, expected {expected_kind}",
            path=source, kind=kind, expected=expected_kind,
        )

    metadata = header.get("metadata", {})
    optimizer = None
    if any(name.startswith(_OPT_PREFIX) for name in tensors):
        optimizer = AdamState(t=int(metadata.pop("optimizer_step", 0)))
        for name in [n for n in tensors if n.startswith(_OPT_PREFIX)]:
            target = optimizer.m if name.startswith("adam.m.") else optimizer.v
            target[name[len("adam.m."):]] = tensors.pop(name)
    return Checkpoint(kind, header.get("config", {}), tensors, metadata, optimizer)


def save_checkpoint(checkpoint: Checkpoint, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(encode_checkpoint(checkpoint))
    os.replace(tmp, path)
    log.info("Saved %s checkpoint to %s", checkpoint.kind, path)
    return path


def load_checkpoint(path: str | Path, expected_kind: str | None = None) -> Checkpoint:
    path = Path(path)
    return decode_checkpoint(path.read_bytes(), str(path), expected_kind)


def config_differences(stored: Mapping[str, Any], current: Mapping[str, Any], prefix: str = "") -> list[str]:
    """Dotted names of every field whose value differs between two config echoes."""
    diffs = []
    for key in sorted(set(stored) | set(current)):
        a, b = stored.get(key), current.get(key)
        if isinstance(a, Mapping) and isinstance(b, Mapping):
            diffs.extend(config_differences(a, b, f"{prefix}{key}."))
        elif _jsonable(a) != _jsonable(b):
            diffs.append(f"{prefix}{key}")
    return diffs


def check_config(checkpoint: Checkpoint, current: Mapping[str, Any]) -> None:
    diffs = config_differences(checkpoint.config, current)
    if diffs:
        raise ConfigMismatchError(
            f"{checkpoint.kind} checkpoint config differs in: {', '.join(diffs)}", fields=diffs
        )
