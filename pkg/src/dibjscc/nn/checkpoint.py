"""Binary parameter checkpoints.

Layout (little-endian)::

    b"DIBP" | u32 version | repeated: u16 name_len, name (utf-8), u8 rank,
    rank x u32 dims, prod(dims) x f32 payload
"""

from __future__ import annotations

import os
import struct
import tempfile
from pathlib import Path
from typing import Mapping

import numpy as np

from .autograd import ShapeError

MAGIC = b"DIBP"
FORMAT_VERSION = 1


class CheckpointFormatError(ValueError):
    pass


class CheckpointVersionError(CheckpointFormatError):
    pass


def encode_params(params: Mapping[str, np.ndarray]) -> bytes:
    out = bytearray(MAGIC)
    out += struct.pack("<I", FORMAT_VERSION)
    for name, arr in params.items():
        arr = np.asarray(arr)
        raw = name.encode("utf-8")
        if len(raw) > 0xFFFF:
            raise ValueError(f"parameter name too long: {name[:40]}...")
        out += struct.pack("<H", len(raw)) + raw
        out += struct.pack("<B", arr.ndim)
        out += struct.pack(f"<{arr.ndim}I", *arr.shape)
        out += np.ascontiguousarray(arr, dtype="<f4").tobytes()
    return bytes(out)


def decode_params(blob: bytes) -> dict[str, np.ndarray]:
    if blob[:4] != MAGIC:
        raise CheckpointFormatError(f"bad checkpoint magic {blob[:4]!r}, expected {MAGIC!r}")
    if len(blob) < 8:
        raise CheckpointFormatError("truncated checkpoint header")
    (version,) = struct.unpack_from("<I", blob, 4)
    if version != FORMAT_VERSION:
        raise CheckpointVersionError(
            f"checkpoint format version {version} is incompatible with supported version {FORMAT_VERSION}")
    pos, params = 8, {}
    try:
        while pos < len(blob):
            (n,) = struct.unpack_from("<H", blob, pos)
            pos += 2
            name = blob[pos:pos + n].decode("utf-8")
            pos += n
            (rank,) = struct.unpack_from("<B", blob, pos)
            pos += 1
            dims = struct.unpack_from(f"<{rank}I", blob, pos)
            pos += 4 * rank
            count = int(np.prod(dims, dtype=np.int64))
            if pos + 4 * count > len(blob):
                raise CheckpointFormatError(f"truncated payload for parameter {name!r}")
            params[name] = np.frombuffer(blob, dtype="<f4", count=count, offset=pos).reshape(dims).astype(np.float32)
            pos += 4 * count
    except struct.error as exc:
        raise CheckpointFormatError(f"truncated checkpoint: {exc}") from None
    return params


def atomic_write_bytes(path: str | os.PathLike, data: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save_params(params: Mapping[str, np.ndarray], path) -> None:
    atomic_write_bytes(path, encode_params(params))


def load_params(path) -> dict[str, np.ndarray]:
    return decode_params(Path(path).read_bytes())


def load_into(target: Mapping[str, "object"], params: Mapping[str, np.ndarray]) -> None:
    """Copy ``params`` into Parameter objects of ``target`` (name -> Parameter)."""
    for name, p in target.items():
        if name not in params:
            raise KeyError(f"checkpoint lacks parameter {name!r}")
        arr = params[name]
        if arr.shape != p.shape:
            raise ShapeError(f"parameter {name!r}: checkpoint shape {arr.shape} != model shape {p.shape}")
    for name, p in target.items():
        p.data = params[name].astype(p.data.dtype, copy=True)
