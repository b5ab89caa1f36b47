"""PQCT tensor container and checkpoint serialization.

Layout (all little-endian): magic ``PQCT``, version u16, rank u16, one
u32 extent per axis, then the payload as row-major float32.

A checkpoint is a single file of consecutive PQCT containers plus a
text index ``<file>.idx`` with one ``name offset d0xd1x...`` line per
tensor, in insertion order.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MAGIC = b"PQCT"
VERSION = 1

__all__ = [
    "FormatError",
    "tensor_to_bytes",
    "tensor_from_bytes",
    "save_tensor",
    "load_tensor",
    "save_checkpoint",
    "load_checkpoint",
]


class FormatError(ValueError):
    """The byte stream is not a valid PQCT container."""


def tensor_to_bytes(arr: np.ndarray) -> bytes:
    arr = np.ascontiguousarray(arr, dtype=np.float32)
    header = MAGIC + struct.pack("<HH", VERSION, arr.ndim)
    extents = struct.pack(f"<{arr.ndim}I", *arr.shape)
    payload = arr.astype("<f4", copy=False).tobytes()
    return header + extents + payload


def tensor_from_bytes(data: bytes) -> np.ndarray:
    """Parse one container from the head of ``data`` (trailing bytes ignored)."""
    if len(data) < 8:
        raise FormatError("truncated header")
    if data[:4] != MAGIC:
        raise FormatError(f"bad magic {data[:4]!r}")
    version, rank = struct.unpack("<HH", data[4:8])
    if version != VERSION:
        raise FormatError(f"unsupported version {version}")
    need = 8 + 4 * rank
    if len(data) < need:
        raise FormatError("truncated extents")
    shape = struct.unpack(f"<{rank}I", data[8:need])
    count = int(np.prod(shape)) if rank else 1
    end = need + 4 * count
    if len(data) < end:
        raise FormatError(
            f"truncated payload: need {end} bytes, have {len(data)}"
        )
    flat = np.frombuffer(data[need:end], dtype="<f4")
    return flat.reshape(shape).astype(np.float32, copy=True)


def container_length(data: bytes) -> int:
    """Total byte length of the container at the head of ``data``."""
    _, rank = struct.unpack("<HH", data[4:8])
    shape = struct.unpack(f"<{rank}I", data[8 : 8 + 4 * rank])
    return 8 + 4 * rank + 4 * int(np.prod(shape))


def save_tensor(path: str | Path, arr: np.ndarray) -> None:
    Path(path).write_bytes(tensor_to_bytes(arr))


def load_tensor(path: str | Path) -> np.ndarray:
    return tensor_from_bytes(Path(path).read_bytes())


def save_checkpoint(path: str | Path, named: dict[str, np.ndarray]) -> None:
    path = Path(path)
    offset = 0
    index_lines = []
    with open(path, "wb") as fh:
        for name, arr in named.items():
            blob = tensor_to_bytes(arr)
            shape = "x".join(str(d) for d in np.asarray(arr).shape)
            index_lines.append(f"{name} {offset} {shape}")
            fh.write(blob)
            offset += len(blob)
    Path(str(path) + ".idx").write_text("\n".join(index_lines) + "\n")


def load_checkpoint(path: str | Path) -> dict[str, np.ndarray]:
    path = Path(path)
    blob = path.read_bytes()
    named: dict[str, np.ndarray] = {}
    for line in Path(str(path) + ".idx").read_text().splitlines():
        if not line.strip():
            continue
        name, offset, _shape = line.split()
        named[name] = tensor_from_bytes(blob[int(offset):])
    return named
