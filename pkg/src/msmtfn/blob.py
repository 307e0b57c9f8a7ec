"""Binary formats: single-tensor blobs and multi-tensor checkpoints.

Tensor blob layout (all little-endian)::

    4 bytes   magic  b"MSTB"
    uint32    dtype code (1 = float32, 2 = float64)
    uint64    rank
    int64[r]  shape
    ...       raw values, C order

A checkpoint is a versioned header, a JSON manifest (names, shapes, offsets,
free-form metadata) and the tensor blobs back to back.
"""
from __future__ import annotations

import io
import json
import struct
from pathlib import Path
from typing import BinaryIO, Mapping

import numpy as np

from .errors import ValidationError

BLOB_MAGIC = b"MSTB"
CKPT_MAGIC = b"MSMTCKPT"
CKPT_VERSION = 1

_DTYPE_CODES = {np.dtype("<f4"): 1, np.dtype("<f8"): 2}
_CODE_DTYPES = {v: k for k, v in _DTYPE_CODES.items()}


def encode_tensor(array: np.ndarray) -> bytes:
    array = np.asarray(array)
    dt = array.dtype.newbyteorder("<")
    if dt not in _DTYPE_CODES:
        raise TypeError(f"unsupported dtype {array.dtype}")
    header = BLOB_MAGIC + struct.pack("<IQ", _DTYPE_CODES[dt], array.ndim)
    shape = struct.pack(f"<{array.ndim}q", *array.shape)
    return header + shape + np.ascontiguousarray(array, dtype=dt).tobytes()


def read_tensor_header(fh: BinaryIO) -> tuple[np.dtype, tuple]:
    head = fh.read(16)
    if len(head) != 16 or head[:4] != BLOB_MAGIC:
        raise ValidationError("not a tensor blob (bad magic)")
    code, rank = struct.unpack("<IQ", head[4:])
    if code not in _CODE_DTYPES:
        raise ValidationError(f"unknown dtype code {code}")
    if rank > 16:
        raise ValidationError(f"implausible tensor rank {rank}")
    raw = fh.read(8 * rank)
    if len(raw) != 8 * rank:
        raise ValidationError("truncated tensor header")
    shape = struct.unpack(f"<{rank}q", raw)
    if any(s <= 0 for s in shape):
        raise ValidationError(f"non-positive dimension in shape {shape}")
    return _CODE_DTYPES[code], tuple(shape)


def decode_tensor(fh: BinaryIO) -> np.ndarray:
    dtype, shape = read_tensor_header(fh)
    n = int(np.prod(shape)) if shape else 1
    raw = fh.read(n * dtype.itemsize)
    if len(raw) != n * dtype.itemsize:
        raise ValidationError(f"tensor payload truncated: expected {n} values of shape {shape}")
    return np.frombuffer(raw, dtype=dtype).reshape(shape).astype(dtype.newbyteorder("="))


def save_tensor(path, array: np.ndarray) -> None:
    Path(path).write_bytes(encode_tensor(array))


def load_tensor(path) -> np.ndarray:
    with open(path, "rb") as fh:
        return decode_tensor(fh)


def peek_shape(path) -> tuple:
    """Shape stored in a blob header, without reading the payload."""
    with open(path, "rb") as fh:
        return read_tensor_header(fh)[1]


def save_checkpoint(path, tensors: Mapping[str, np.ndarray], metadata: dict | None = None) -> None:
    """Write named tensors plus JSON metadata. Output bytes depend only on the inputs."""
    blobs, entries, offset = [], [], 0
    for name in tensors:
        b = encode_tensor(tensors[name])
        entries.append({"name": name, "shape": list(np.shape(tensors[name])), "offset": offset, "nbytes": len(b)})
        blobs.append(b)
        offset += len(b)
    manifest = json.dumps(
        {"version": CKPT_VERSION, "tensors": entries, "metadata": metadata or {}},
        sort_keys=True,
        separators=(",", ":"),
    ).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CKPT_MAGIC + struct.pack("<IQ", CKPT_VERSION, len(manifest)))
        fh.write(manifest)
        for b in blobs:
            fh.write(b)


def load_checkpoint(path) -> tuple[dict, dict]:
    """Return ``(tensors, metadata)``."""
    data = Path(path).read_bytes()
    if data[:8] != CKPT_MAGIC:
        raise ValidationError(f"{path}: not a checkpoint file")
    version, mlen = struct.unpack("<IQ", data[8:20])
    if version != CKPT_VERSION:
        raise ValidationError(f"{path}: unsupported checkpoint version {version}")
    manifest = json.loads(data[20 : 20 + mlen].decode("utf-8"))
    body = 20 + mlen
    tensors = {}
    for entry in manifest["tensors"]:
        start = body + entry["offset"]
        arr = decode_tensor(io.BytesIO(data[start : start + entry["nbytes"]]))
        if list(arr.shape) != entry["shape"]:
            raise ValidationError(f"{path}: tensor {entry['name']} shape mismatch")
        tensors[entry["name"]] = arr
    return tensors, manifest["metadata"]
