"""Binary checkpoint format: ``PROEX-CKPT v1`` header plus named float64 blocks.

Layout (all integers little-endian)::

    b"PROEX-CKPT v1\\n"
    u32 section count
    per section: u16 name length, name (utf-8), u8 ndim, ndim x u64 dims,
                 prod(dims) x f64 values (C order)
"""

from __future__ import annotations

import os
import struct
from pathlib import Path

import numpy as np

MAGIC = b"PROEX-CKPT v1\n"


class CheckpointError(ValueError):
    pass


def save_checkpoint(path, sections: dict[str, np.ndarray]) -> None:
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    with tmp.open("wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(sections)))
        for name, arr in sections.items():
            arr = np.asarray(arr, dtype="<f8")
            raw = name.encode("utf-8")
            fh.write(struct.pack("<H", len(raw)))
            fh.write(raw)
            fh.write(struct.pack("<B", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
            fh.write(arr.tobytes(order="C"))
    os.replace(tmp, path)


def _read(fh, n: int) -> bytes:
    buf = fh.read(n)
    if len(buf) != n:
        raise CheckpointError("truncated checkpoint")
    return buf


def load_checkpoint(path, expected: dict[str, tuple] | None = None) -> dict[str, np.ndarray]:
    """Read all sections; if ``expected`` maps names to shapes, validate them."""
    with Path(path).open("rb") as fh:
        if fh.read(len(MAGIC)) != MAGIC:
            raise CheckpointError(f"{path}: not a PROEX-CKPT v1 file")
        (count,) = struct.unpack("<I", _read(fh, 4))
        out = {}
        for _ in range(count):
            (nlen,) = struct.unpack("<H", _read(fh, 2))
            name = _read(fh, nlen).decode("utf-8")
            (ndim,) = struct.unpack("<B", _read(fh, 1))
            shape = struct.unpack(f"<{ndim}Q", _read(fh, 8 * ndim))
            size = int(np.prod(shape, dtype=np.int64))
            out[name] = np.frombuffer(_read(fh, 8 * size), dtype="<f8").reshape(shape).astype(np.float64)
        if fh.read(1):
            raise CheckpointError(f"{path}: trailing bytes after last section")
    if expected is not None:
        missing = set(expected) - set(out)
        if missing:
            raise CheckpointError(f"missing sections: {sorted(missing)}")
        for name, shape in expected.items():
            if tuple(out[name].shape) != tuple(shape):
                raise CheckpointError(f"section {name}: shape {out[name].shape} != expected {tuple(shape)}")
    return out
