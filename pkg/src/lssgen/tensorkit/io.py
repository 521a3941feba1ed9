"""LST1 tensor container and checkpoint manifests.

An LST1 record is the magic ``b"LST1"``, a little-endian u32 rank, ``rank``
u32 dimensions, then the values as little-endian float64 in row-major order.
A checkpoint is a sequence of records in one file plus a text manifest next
to it (``<file>.manifest``) holding ``key=value`` header lines and one
``tensor <name> <d0>x<d1>...`` line per record.
"""
from __future__ import annotations

import struct
from pathlib import Path
from typing import BinaryIO

import numpy as np

MAGIC = b"LST1"


class FormatError(ValueError):
    pass


def write_tensor(f: BinaryIO, arr) -> None:
    arr = np.ascontiguousarray(arr, dtype="<f8")
    f.write(MAGIC)
    f.write(struct.pack("<I", arr.ndim))
    f.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
    f.write(arr.tobytes(order="C"))


def read_tensor(f: BinaryIO) -> np.ndarray:
    magic = f.read(4)
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {MAGIC!r}")
    (rank,) = struct.unpack("<I", f.read(4))
    dims = struct.unpack(f"<{rank}I", f.read(4 * rank)) if rank else ()
    count = int(np.prod(dims)) if dims else 1
    raw = f.read(8 * count)
    if len(raw) != 8 * count:
        raise FormatError("truncated tensor payload")
    return np.frombuffer(raw, dtype="<f8").astype(np.float64).reshape(dims)


def save_tensor(path, arr) -> None:
    with open(path, "wb") as f:
        write_tensor(f, arr)


def load_tensor(path) -> np.ndarray:
    with open(path, "rb") as f:
        return read_tensor(f)


def manifest_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".manifest")


def save_checkpoint(path, tensors: dict[str, np.ndarray], header: dict[str, object]) -> None:
    path = Path(path)
    lines = [f"{k}={v}" for k, v in header.items()]
    with open(path, "wb") as f:
        for name, arr in tensors.items():
            write_tensor(f, arr)
            shape = "x".join(str(d) for d in np.shape(arr)) or "scalar"
            lines.append(f"tensor {name} {shape}")
    manifest_path(path).write_text("\n".join(lines) + "\n")


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], dict[str, str]]:
    path = Path(path)
    mpath = manifest_path(path)
    if not mpath.exists():
        raise FileNotFoundError(f"missing manifest {mpath}")
    header: dict[str, str] = {}
    names: list[tuple[str, str]] = []
    for line in mpath.read_text().splitlines():
        if not line.strip():
            continue
        if line.startswith("tensor "):
            _, name, shape = line.split()
            names.append((name, shape))
        else:
            key, _, value = line.partition("=")
            header[key.strip()] = value.strip()
    tensors = {}
    with open(path, "rb") as f:
        for name, shape in names:
            arr = read_tensor(f)
            expected = "x".join(str(d) for d in arr.shape) or "scalar"
            if expected != shape:
                raise FormatError(f"tensor {name}: manifest says {shape}, file has {expected}")
            tensors[name] = arr
    return tensors, header
