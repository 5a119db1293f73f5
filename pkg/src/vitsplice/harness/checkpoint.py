"""Versioned binary checkpoints.

Layout (all integers little-endian)::

    magic      8 bytes  b"VSPLCKPT"
    version    u32
    header_len u64
    header     UTF-8 JSON: config text, tensor table (name, shape, offset)
    payload    float64 little-endian tensors, concatenated in table order
    checksum   32 bytes SHA-256 of everything above
"""
from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

import numpy as np

from .. import nn_core as nn
from ..errors import CheckpointError
from ..vit_recon import ModelParams, ViTConfig, param_shapes
from .config import PipelineConfig, parse_config, serialize_config

MAGIC = b"VSPLCKPT"
VERSION = 1
_PREFIX = struct.Struct("<8sIQ")
_DIGEST = 32


def checkpoint_bytes(params: ModelParams, cfg: PipelineConfig) -> bytes:
    table = []
    chunks = []
    offset = 0
    for name, p in params.items():
        raw = np.ascontiguousarray(p.data, dtype="<f8").tobytes()
        table.append({"name": name, "shape": list(p.shape), "offset": offset, "nbytes": len(raw)})
        chunks.append(raw)
        offset += len(raw)
    header = {"config": serialize_config(cfg), "rng": nn.RNG_ALGORITHM, "tensors": table}
    hbytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    body = _PREFIX.pack(MAGIC, VERSION, len(hbytes)) + hbytes + b"".join(chunks)
    return body + hashlib.sha256(body).digest()


def save_checkpoint(params: ModelParams, cfg: PipelineConfig, path) -> None:
    if params.cfg != cfg.vit:
        raise CheckpointError("parameter set was built for a different ViT config than the pipeline config")
    Path(path).write_bytes(checkpoint_bytes(params, cfg))


def load_checkpoint(path, expected: ViTConfig | None = None) -> tuple[ModelParams, PipelineConfig]:
    """Read and validate a checkpoint.

    With ``expected`` given, every tensor must match the shape that config
    implies; a mismatch names the offending tensor.
    """
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"no such checkpoint: {path}")
    blob = path.read_bytes()
    if len(blob) < _PREFIX.size + _DIGEST:
        raise CheckpointError(f"{path}: truncated checkpoint")
    body, digest = blob[:-_DIGEST], blob[-_DIGEST:]
    magic, version, hlen = _PREFIX.unpack_from(body)
    if magic != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (bad magic)")
    if version != VERSION:
        raise CheckpointError(f"{path}: checkpoint format version {version}, this build reads version {VERSION}")
    if hashlib.sha256(body).digest() != digest:
        raise CheckpointError(f"{path}: checksum mismatch, file is corrupted")
    start = _PREFIX.size
    try:
        header = json.loads(body[start : start + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: unreadable header ({exc})") from exc
    cfg = parse_config(header["config"])
    payload = memoryview(body)[start + hlen :]

    target = expected if expected is not None else cfg.vit
    shapes = param_shapes(target)
    names = [t["name"] for t in header["tensors"]]
    if set(names) != set(shapes):
        missing = sorted(set(shapes) - set(names))
        extra = sorted(set(names) - set(shapes))
        raise CheckpointError(f"{path}: tensor names differ from config (missing {missing}, unexpected {extra})")
    params = ModelParams(target)
    for t in header["tensors"]:
        shape = tuple(t["shape"])
        if shape != shapes[t["name"]]:
            raise CheckpointError(
                f"{path}: tensor {t['name']!r} has shape {shape}, config expects {shapes[t['name']]}"
            )
        end = t["offset"] + t["nbytes"]
        if end > len(payload) or t["nbytes"] != 8 * int(np.prod(shape)):
            raise CheckpointError(f"{path}: tensor {t['name']!r} extends past the payload")
        data = np.frombuffer(payload[t["offset"] : end], dtype="<f8").reshape(shape)
        params[t["name"]] = nn.Parameter(data.astype(np.float64))
    # canonical order
    params = ModelParams(target, ((n, params[n]) for n in shapes))
    return params, cfg
