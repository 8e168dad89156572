"""Versioned binary checkpoint container.

Layout (all integers little-endian)::

    b"DFKD" | u32 version | u64 header length | JSON header | blobs

The header holds the architecture, a manifest ``[{name, shape, dtype}]`` in
blob order and optional mask/meta sections.  Blobs are raw ``<f4`` (tensors,
running statistics) or ``u1`` (pruning masks) arrays in manifest order.
"""
from __future__ import annotations

import hashlib
import json
import os
import struct
from pathlib import Path

import numpy as np

from ..errors import CorruptCheckpointError
from .model import LayerSpec, Model

MAGIC = b"DFKD"
VERSION = 1
_PREFIX = struct.Struct("<4sIQ")
_DTYPES = {"f32": np.dtype("<f4"), "u8": np.dtype("u1")}
MASK_PREFIX = "mask:"


def dumps_json(obj) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":")).encode("utf-8")


def pack_container(magic: bytes, header: dict, blobs: list[np.ndarray]) -> bytes:
    head = dumps_json(header)
    parts = [_PREFIX.pack(magic, VERSION, len(head)), head]
    parts += [np.ascontiguousarray(b).tobytes() for b in blobs]
    return b"".join(parts)


def unpack_container(buf: bytes, magic: bytes, error=CorruptCheckpointError):
    """Split a container into (header, {name: array}); the manifest lives at ``header['blobs']``."""
    if len(buf) < _PREFIX.size:
        raise error(f"file is {len(buf)} bytes, shorter than the {_PREFIX.size}-byte preamble")
    got_magic, version, head_len = _PREFIX.unpack_from(buf, 0)
    if got_magic != magic:
        raise error(f"bad magic {got_magic!r} at offset 0, expected {magic!r}")
    if version != VERSION:
        raise error(f"unsupported format version {version} at offset 4 (this reader handles {VERSION})")
    start = _PREFIX.size
    if start + head_len > len(buf):
        raise error(f"header of {head_len} bytes at offset {start} runs past end of file ({len(buf)} bytes)")
    try:
        header = json.loads(buf[start:start + head_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise error(f"unreadable JSON header at offset {start}: {e}") from None
    offset = start + head_len
    arrays = {}
    for entry in header.get("blobs", []):
        name, shape = entry["name"], tuple(entry["shape"])
        dtype = _DTYPES.get(entry["dtype"])
        if dtype is None:
            raise error(f"blob {name!r}: unknown dtype {entry['dtype']!r}")
        nbytes = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize
        if offset + nbytes > len(buf):
            raise error(f"blob {name!r} truncated: needs {nbytes} bytes at offset {offset}, "
                        f"only {len(buf) - offset} remain")
        arrays[name] = np.frombuffer(buf, dtype=dtype, count=nbytes // dtype.itemsize,
                                     offset=offset).reshape(shape).copy()
        offset += nbytes
    if offset != len(buf):
        raise error(f"{len(buf) - offset} unexpected trailing bytes at offset {offset}")
    return header, arrays


def atomic_write(path, data: bytes) -> None:
    """Write via ``<path>.partial`` and rename, removing the partial file on failure."""
    path = Path(path)
    tmp = path.with_name(path.name + ".partial")
    try:
        with open(tmp, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        tmp.unlink(missing_ok=True)
        raise


def checkpoint_bytes(model: Model) -> bytes:
    manifest, blobs = [], []
    for name, arr in model.state_arrays():
        manifest.append({"name": name, "shape": list(arr.shape), "dtype": "f32"})
        blobs.append(arr.astype("<f4", copy=False))
    mask_info = None
    if model.mask is not None:
        mask_info = {"threshold": float(model.mask.threshold), "amount": model.mask.amount}
        for name, m in model.mask.masks.items():
            manifest.append({"name": MASK_PREFIX + name, "shape": list(m.shape), "dtype": "u8"})
            blobs.append(m.astype("u1", copy=False))
    header = {
        "arch": model.architecture(),
        "blobs": manifest,
        "mask": mask_info,
        "meta": getattr(model, "meta", {}) or {},
    }
    return pack_container(MAGIC, header, blobs)


def model_hash(model: Model) -> str:
    """sha256 of the model's checkpoint bytes."""
    return hashlib.sha256(checkpoint_bytes(model)).hexdigest()


def file_hash(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def save_checkpoint(model: Model, path) -> None:
    atomic_write(path, checkpoint_bytes(model))


def model_from_bytes(buf: bytes) -> Model:
    """Rebuild a model (in eval mode) from checkpoint bytes."""
    header, arrays = unpack_container(buf, MAGIC)
    arch = header["arch"]
    model = Model(tuple(arch["input_shape"]), [LayerSpec.from_json(s) for s in arch["layers"]], seed=None)
    expected = model.state_arrays()
    for name, target in expected:
        if name not in arrays:
            raise CorruptCheckpointError(f"missing blob {name!r}")
        src = arrays[name]
        if src.shape != target.shape:
            raise CorruptCheckpointError(f"blob {name!r} has shape {src.shape}, architecture needs {target.shape}")
        target[...] = src
    for (m, v) in model.running_stats():
        if np.any(v < 0):
            raise CorruptCheckpointError("negative running variance in checkpoint")
    known = {n for n, _ in expected}
    mask_blobs = {k[len(MASK_PREFIX):]: v for k, v in arrays.items() if k.startswith(MASK_PREFIX)}
    stray = set(arrays) - known - {MASK_PREFIX + k for k in mask_blobs}
    if stray:
        raise CorruptCheckpointError(f"unexpected blobs {sorted(stray)}")
    if header.get("mask") is not None:
        from ..prune import MaskSet

        info = header["mask"]
        model.mask = MaskSet(mask_blobs, float(info["threshold"]), info.get("amount"))
    model.meta = header.get("meta", {})
    return model.eval()


def load_checkpoint(path) -> Model:
    return model_from_bytes(Path(path).read_bytes())
