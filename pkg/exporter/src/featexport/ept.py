"""EPT tensor format, implemented against the documented byte layout.

Deliberately independent of the protolens package: the binary format and
the manifest text format are the interchange contract, so this side writes
them from the spec sheet rather than sharing code.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MAGIC = b"EPT1"
DTYPE_F32 = 1


class FormatError(ValueError):
    pass


def write_ept(data: np.ndarray, destination) -> None:
    data = np.ascontiguousarray(data, dtype=np.float32)
    if data.ndim not in (1, 2, 3):
        raise FormatError(f"EPT rank must be 1..3, got {data.ndim}")
    with open(destination, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", data.ndim))
        f.write(struct.pack(f"<{data.ndim}I", *data.shape))
        f.write(struct.pack("<I", DTYPE_F32))
        f.write(data.astype("<f4", copy=False).tobytes())


def read_ept(source) -> np.ndarray:
    path = Path(source)
    raw = path.read_bytes()
    if raw[:4] != MAGIC:
        raise FormatError(f"{path}: bad magic")
    (ndim,) = struct.unpack_from("<I", raw, 4)
    dims = struct.unpack_from(f"<{ndim}I", raw, 8)
    (dtype,) = struct.unpack_from("<I", raw, 8 + 4 * ndim)
    if dtype != DTYPE_F32:
        raise FormatError(f"{path}: unknown dtype {dtype}")
    count = int(np.prod(dims))
    payload = raw[12 + 4 * ndim :]
    if len(payload) != 4 * count:
        raise FormatError(f"{path}: payload size mismatch")
    return np.frombuffer(payload, dtype="<f4").reshape(dims).copy()
