"""Binary weight-file format.

Layout (all integers little-endian)::

    b"V2TEX001"
    u64 tensor count
    per tensor:
        u64 name length, UTF-8 name
        u64 rank, rank x u64 dimensions
        float64 payload, row-major
    u32 CRC-32 of every preceding byte
"""
from __future__ import annotations

import io
import os
import struct
import zlib
from pathlib import Path

import numpy as np

from .v2 import V2Params

MAGIC = b"V2TEX001"
REQUIRED = ("theta", "bn_running_mean", "bn_running_var")


class WeightFormatError(ValueError):
    pass


def encode_tensors(tensors: dict) -> bytes:
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<Q", len(tensors)))
    for name, arr in tensors.items():
        arr = np.ascontiguousarray(arr, dtype="<f8")
        raw = name.encode("utf-8")
        buf.write(struct.pack("<Q", len(raw)))
        buf.write(raw)
        buf.write(struct.pack("<Q", arr.ndim))
        buf.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        buf.write(arr.tobytes())
    body = buf.getvalue()
    return body + struct.pack("<I", zlib.crc32(body) & 0xFFFFFFFF)


def decode_tensors(data: bytes) -> dict:
    if len(data) < len(MAGIC) + 12:
        raise WeightFormatError("file too short")
    if data[: len(MAGIC)] != MAGIC:
        if data[:5] == MAGIC[:5]:
            raise WeightFormatError(f"unsupported format version {data[5:8]!r}")
        raise WeightFormatError("bad magic bytes")
    body, (crc,) = data[:-4], struct.unpack("<I", data[-4:])
    if zlib.crc32(body) & 0xFFFFFFFF != crc:
        raise WeightFormatError("CRC mismatch (file corrupt or truncated)")
    pos = len(MAGIC)

    def take(n):
        nonlocal pos
        if pos + n > len(body):
            raise WeightFormatError("truncated tensor record")
        chunk = body[pos:pos + n]
        pos += n
        return chunk

    (count,) = struct.unpack("<Q", take(8))
    tensors = {}
    for _ in range(count):
        (nlen,) = struct.unpack("<Q", take(8))
        name = take(nlen).decode("utf-8")
        (rank,) = struct.unpack("<Q", take(8))
        shape = struct.unpack(f"<{rank}Q", take(8 * rank))
        size = int(np.prod(shape, dtype=np.int64))
        arr = np.frombuffer(take(8 * size), dtype="<f8").reshape(shape).astype(np.float64)
        tensors[name] = arr
    if pos != len(body):
        raise WeightFormatError("trailing bytes after last tensor")
    return tensors


def save_checkpoint(params: V2Params, path) -> None:
    tensors = {
        "theta": params.theta,
        "bn_running_mean": params.running_mean,
        "bn_running_var": params.running_var,
        "bn_momentum": np.array([params.momentum]),
        "step": np.array([float(params.step)]),
    }
    data = encode_tensors(tensors)
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(data)
    os.replace(tmp, path)


def load_checkpoint(path, expect_shape=None) -> V2Params:
    tensors = decode_tensors(Path(path).read_bytes())
    missing = [n for n in REQUIRED if n not in tensors]
    if missing:
        raise WeightFormatError(f"missing tensors: {', '.join(missing)}")
    theta = tensors["theta"]
    if expect_shape is not None and tuple(theta.shape) != tuple(expect_shape):
        raise WeightFormatError(
            f"shape mismatch: file has theta {tuple(theta.shape)}, expected {tuple(expect_shape)}")
    d = theta.shape[0] if theta.ndim else 0
    for n in ("bn_running_mean", "bn_running_var"):
        if tensors[n].shape != (d,):
            raise WeightFormatError(f"shape mismatch: {n} is {tensors[n].shape}, expected ({d},)")
    momentum = float(tensors["bn_momentum"][0]) if "bn_momentum" in tensors else 0.1
    step = int(tensors["step"][0]) if "step" in tensors else 0
    try:
        return V2Params(theta, tensors["bn_running_mean"], tensors["bn_running_var"], momentum, step)
    except ValueError as exc:
        raise WeightFormatError(str(exc)) from exc
