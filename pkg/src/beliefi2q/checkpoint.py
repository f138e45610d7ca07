"""Versioned binary checkpoint container.

Layout: 8-byte magic, little-endian u32 format version, u32 header length,
UTF-8 JSON metadata header, then a ``torch.save`` payload of tensors.
"""

from __future__ import annotations

import io
import json
import struct
from pathlib import Path
from typing import Any

import torch

MAGIC = b"BI2QCKPT"
VERSION = 1


class CheckpointError(RuntimeError):
    pass


def save_checkpoint(path: str | Path, metadata: dict[str, Any], payload: dict[str, Any]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header = json.dumps(metadata, sort_keys=True).encode("utf-8")
    buf = io.BytesIO()
    torch.save(payload, buf)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", VERSION, len(header)))
        fh.write(header)
        fh.write(buf.getvalue())
    return path


def read_metadata(path: str | Path) -> dict[str, Any]:
    return load_checkpoint(path, header_only=True)[0]


def load_checkpoint(path: str | Path, header_only: bool = False) -> tuple[dict[str, Any], dict[str, Any]]:
    with open(path, "rb") as fh:
        if fh.read(len(MAGIC)) != MAGIC:
            raise CheckpointError(f"{path}: not a checkpoint file")
        raw = fh.read(8)
        if len(raw) != 8:
            raise CheckpointError(f"{path}: truncated header")
        version, n = struct.unpack("<II", raw)
        if version != VERSION:
            raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
        try:
            metadata = json.loads(fh.read(n).decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise CheckpointError(f"{path}: corrupt metadata header") from exc
        if header_only:
            return metadata, {}
        try:
            payload = torch.load(io.BytesIO(fh.read()), weights_only=True)
        except Exception as exc:  # torch raises several types for damaged archives
            raise CheckpointError(f"{path}: corrupt payload ({exc})") from exc
    return metadata, payload
