"""The ``.ocgn`` checkpoint container.

Layout (all integers little-endian uint32)::

    b"OCGN" | version | len(meta) | meta JSON (UTF-8, sorted keys)
    | tensor count | per tensor: len(name) | name | rank | dims... | float32 payload
"""
from __future__ import annotations

import json
import os
import struct
from typing import Dict, Tuple

import numpy as np
import torch

from .errors import ConfigMismatchError, FormatError
from .model import OCGAN, ModelConfig, build, load_parameter_store, parameter_store

MAGIC = b"OCGN"
VERSION = 1


def encode_checkpoint(tensors: Dict[str, torch.Tensor], metadata: dict) -> bytes:
    meta = json.dumps(metadata, sort_keys=True, separators=(",", ":")).encode("utf-8")
    parts = [MAGIC, struct.pack("<II", VERSION, len(meta)), meta, struct.pack("<I", len(tensors))]
    for name, tensor in tensors.items():
        arr = np.ascontiguousarray(torch.as_tensor(tensor).detach().cpu().numpy(), dtype="<f4")
        raw = name.encode("utf-8")
        parts.append(struct.pack(f"<I{len(raw)}sI", len(raw), raw, arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(arr.tobytes())
    return b"".join(parts)


class _Reader:
    def __init__(self, data: bytes):
        self.data, self.pos = data, 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise FormatError("checkpoint is truncated")
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def dims(self, rank: int) -> tuple:
        return struct.unpack(f"<{rank}I", self.take(4 * rank))


def decode_checkpoint(data: bytes) -> Tuple[dict, Dict[str, torch.Tensor]]:
    r = _Reader(bytes(data))
    if r.take(4) != MAGIC:
        raise FormatError("not an OCGN checkpoint (bad magic)")
    version = r.u32()
    if version != VERSION:
        raise FormatError(f"unsupported checkpoint version {version}")
    try:
        metadata = json.loads(r.take(r.u32()).decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"corrupt checkpoint metadata: {exc}") from None
    tensors = {}
    for _ in range(r.u32()):
        name = r.take(r.u32()).decode("utf-8")
        rank = r.u32()
        dims = r.dims(rank)
        count = int(np.prod(dims, dtype=np.int64))
        arr = np.frombuffer(r.take(4 * count), dtype="<f4").reshape(dims)
        tensors[name] = torch.from_numpy(arr.astype(np.float32))
    if r.pos != len(r.data):
        raise FormatError("trailing bytes after last tensor")
    return metadata, tensors


def save_checkpoint(path, tensors: Dict[str, torch.Tensor], metadata: dict):
    data = encode_checkpoint(tensors, metadata)
    with open(path, "wb") as f:
        f.write(data)


def load_checkpoint(path) -> Tuple[dict, Dict[str, torch.Tensor]]:
    with open(path, "rb") as f:
        return decode_checkpoint(f.read())


def save_model(path, model: OCGAN, metadata: dict, tensors=None):
    """Write ``model`` (or an explicit parameter snapshot) with its config embedded."""
    meta = dict(metadata)
    meta["model_config"] = model.config.to_dict()
    meta["networks"] = list(model.networks)
    save_checkpoint(path, parameter_store(model) if tensors is None else tensors, meta)


def load_model(path) -> Tuple[OCGAN, dict]:
    metadata, tensors = load_checkpoint(path)
    if "model_config" not in metadata or "networks" not in metadata:
        raise ConfigMismatchError("checkpoint metadata lacks model_config/networks")
    model, _ = build(ModelConfig.from_dict(metadata["model_config"]), metadata["networks"])
    load_parameter_store(model, tensors)
    model.eval()
    return model, metadata
