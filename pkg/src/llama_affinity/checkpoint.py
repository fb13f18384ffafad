"""Versioned checkpoint files.

Layout::

    b"LLAFFCKP"                   8-byte magic
    uint64 little-endian          manifest length in bytes
    manifest                      UTF-8 JSON
    tensor buffers                little-endian float32, manifest order

The manifest records the format version, both configs, run metadata and, per
tensor, its name, shape, byte offset (relative to the buffer section) and
byte length.
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .model import ModelConfig, param_shapes
from .tensor import Tensor
from .training import TrainConfig

MAGIC = b"LLAFFCKP"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<8sQ")


class CheckpointError(Exception):
    pass


class CheckpointVersionError(CheckpointError):
    pass


class CheckpointTruncatedError(CheckpointError):
    pass


class CheckpointManifestError(CheckpointError):
    pass


@dataclass
class Checkpoint:
    model_config: ModelConfig
    params: dict  # name -> np.ndarray
    train_config: TrainConfig
    metadata: dict = field(default_factory=dict)

    def tensors(self, requires_grad: bool = False) -> dict[str, Tensor]:
        return {k: Tensor(np.array(v, dtype=np.float32), requires_grad=requires_grad, name=k)
                for k, v in self.params.items()}


def save_checkpoint(cp: Checkpoint, path) -> None:
    entries, buffers, offset = [], [], 0
    for name, arr in cp.params.items():
        buf = np.ascontiguousarray(arr, dtype="<f4").tobytes()
        entries.append({"name": name, "shape": list(np.shape(arr)), "offset": offset, "nbytes": len(buf)})
        buffers.append(buf)
        offset += len(buf)
    manifest = {
        "format_version": FORMAT_VERSION,
        "model_config": cp.model_config.to_dict(),
        "train_config": cp.train_config.to_dict(),
        "metadata": cp.metadata,
        "tensors": entries,
        "data_bytes": offset,
    }
    blob = json.dumps(manifest, sort_keys=True).encode("utf-8")
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with tmp.open("wb") as fh:
        fh.write(_HEADER.pack(MAGIC, len(blob)))
        fh.write(blob)
        for buf in buffers:
            fh.write(buf)
    tmp.replace(path)


def load_checkpoint(path) -> Checkpoint:
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise CheckpointTruncatedError(f"{path}: file shorter than header")
    magic, mlen = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file")
    if len(raw) < _HEADER.size + mlen:
        raise CheckpointTruncatedError(f"{path}: manifest cut short")
    try:
        manifest = json.loads(raw[_HEADER.size:_HEADER.size + mlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointManifestError(f"{path}: unreadable manifest ({exc})") from None

    version = manifest.get("format_version")
    if version != FORMAT_VERSION:
        raise CheckpointVersionError(f"{path}: format version {version!r}, expected {FORMAT_VERSION}")
    try:
        model_config = ModelConfig.from_dict(manifest["model_config"])
        train_config = TrainConfig.from_dict(manifest["train_config"])
        entries = manifest["tensors"]
        data_bytes = int(manifest["data_bytes"])
    except (KeyError, TypeError, ValueError) as exc:
        raise CheckpointManifestError(f"{path}: bad manifest ({exc})") from None

    expected = param_shapes(model_config)
    offset = 0
    for e in entries:
        shape = tuple(e["shape"])
        if expected.get(e["name"]) != shape:
            raise CheckpointManifestError(
                f"{path}: tensor {e['name']!r} shape {shape} disagrees with config {expected.get(e['name'])}")
        if e["nbytes"] != 4 * int(np.prod(shape)) or e["offset"] != offset:
            raise CheckpointManifestError(f"{path}: tensor {e['name']!r} size/offset inconsistent with shape")
        offset += e["nbytes"]
    if offset != data_bytes or {e["name"] for e in entries} != set(expected):
        raise CheckpointManifestError(f"{path}: manifest tensor list does not cover the model")

    body = raw[_HEADER.size + mlen:]
    if len(body) < data_bytes:
        raise CheckpointTruncatedError(f"{path}: expected {data_bytes} data bytes, found {len(body)}")
    if len(body) > data_bytes:
        raise CheckpointManifestError(f"{path}: {len(body) - data_bytes} trailing bytes after data")

    params = {}
    for e in entries:
        arr = np.frombuffer(body, dtype="<f4", count=e["nbytes"] // 4, offset=e["offset"])
        params[e["name"]] = arr.reshape(e["shape"]).astype(np.float32)
    return Checkpoint(model_config, params, train_config, manifest.get("metadata", {}))
