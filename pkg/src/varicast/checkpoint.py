"""Versioned binary checkpoints with bit-exact round trips.

Layout (all integers little-endian):
  magic               6 bytes  b"VCAST\\0"
  version             uint32
  config text         uint64 length + utf-8 bytes (INI snapshot)
  step                uint64
  array count         uint64
  per array:          uint32 name length + utf-8 name,
                      uint32 ndim, uint64 dims..., float64 data (C order)

Parameter arrays are stored under their model names; Adam moments under
"adam.m.<name>" / "adam.v.<name>" plus a scalar "adam.t". RNG streams
are derived from (train.seed, step), so persisting those two integers
reproduces every stream.
"""

from __future__ import annotations

import hashlib
import struct
from pathlib import Path

import numpy as np

from .errors import ContractError
from .tensor import Tensor

MAGIC = b"VCAST\x00"
VERSION = 1


def save_checkpoint(path, config_text: str, step: int,
                    arrays: list[tuple[str, np.ndarray]]) -> None:
    buf = bytearray()
    buf += MAGIC
    buf += struct.pack("<I", VERSION)
    enc = config_text.encode("utf-8")
    buf += struct.pack("<Q", len(enc))
    buf += enc
    buf += struct.pack("<Q", step)
    buf += struct.pack("<Q", len(arrays))
    for name, arr in arrays:
        nb = name.encode("utf-8")
        buf += struct.pack("<I", len(nb))
        buf += nb
        # asarray (not ascontiguousarray) keeps 0-d shapes; tobytes always
        # serializes C order
        arr = np.asarray(arr, dtype="<f8")
        buf += struct.pack("<I", arr.ndim)
        for dim in arr.shape:
            buf += struct.pack("<Q", dim)
        buf += arr.tobytes()
    Path(path).write_bytes(bytes(buf))


def load_checkpoint(path) -> tuple[str, int, dict[str, np.ndarray]]:
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise ContractError(f"cannot read checkpoint {path}: {exc}") from None
    off = 0

    def take(n: int) -> bytes:
        nonlocal off
        if off + n > len(raw):
            raise ContractError(f"truncated checkpoint {path}")
        out = raw[off : off + n]
        off += n
        return out

    if take(len(MAGIC)) != MAGIC:
        raise ContractError(f"{path} is not a checkpoint (bad magic)")
    (version,) = struct.unpack("<I", take(4))
    if version != VERSION:
        raise ContractError(f"checkpoint version {version} unsupported (expected {VERSION})")
    (clen,) = struct.unpack("<Q", take(8))
    config_text = take(clen).decode("utf-8")
    (step,) = struct.unpack("<Q", take(8))
    (count,) = struct.unpack("<Q", take(8))
    arrays: dict[str, np.ndarray] = {}
    for _ in range(count):
        (nlen,) = struct.unpack("<I", take(4))
        name = take(nlen).decode("utf-8")
        (ndim,) = struct.unpack("<I", take(4))
        shape = tuple(struct.unpack("<Q", take(8))[0] for _ in range(ndim))
        size = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(take(size * 8), dtype="<f8").reshape(shape).copy()
        arrays[name] = arr
    if off != len(raw):
        raise ContractError(f"trailing bytes in checkpoint {path}")
    return config_text, step, arrays


def checkpoint_hash(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()[:16]


def assign_parameters(named: list[tuple[str, Tensor]], arrays: dict[str, np.ndarray]) -> None:
    """Copy stored parameter values into live tensors, names must match."""
    for name, p in named:
        if name not in arrays:
            raise ContractError(f"checkpoint missing parameter {name!r}")
        stored = arrays[name]
        if stored.shape != p.data.shape:
            raise ContractError(
                f"checkpoint parameter {name!r} has shape {stored.shape}, expected {p.data.shape}"
            )
        p.data[...] = stored
