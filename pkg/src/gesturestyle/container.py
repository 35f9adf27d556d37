"""Binary ``TSTY`` containers.

Two layouts share the magic bytes:

* version 1 (segments, normalization stats): five float32 matrices.
  ``b"TSTY" | u32 version | 5 x (u32 rows, u32 cols) | row-major data``
* version 2 (checkpoints): a JSON header followed by any number of named
  float32 or float64 matrices.
  ``b"TSTY" | u32 version | u32 json_len | json | u32 count | u32 itemsize |
  count x (u32 rows, u32 cols) | row-major data``

All integers and floats are little-endian.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import Sequence

import numpy as np

MAGIC = b"TSTY"
SEGMENT_VERSION = 1
ARCHIVE_VERSION = 2
N_SEGMENT_MATRICES = 5


class ContainerError(ValueError):
    """Malformed or truncated container file."""


def _as_matrix(a: np.ndarray) -> np.ndarray:
    a = np.asarray(a)
    if a.ndim == 1:
        a = a.reshape(1, -1)
    if a.ndim != 2:
        raise ContainerError(f"expected a 1-D or 2-D array, got shape {a.shape}")
    return a


def write_matrices(path: str | Path, matrices: Sequence[np.ndarray]) -> None:
    if len(matrices) != N_SEGMENT_MATRICES:
        raise ContainerError(f"a segment container holds {N_SEGMENT_MATRICES} matrices, got {len(matrices)}")
    mats = [np.ascontiguousarray(_as_matrix(m), dtype="<f4") for m in matrices]
    parts = [MAGIC, struct.pack("<I", SEGMENT_VERSION)]
    parts += [struct.pack("<II", *m.shape) for m in mats]
    parts += [m.tobytes() for m in mats]
    Path(path).write_bytes(b"".join(parts))


def read_matrices(path: str | Path) -> list[np.ndarray]:
    buf = Path(path).read_bytes()
    if buf[:4] != MAGIC:
        raise ContainerError(f"{path}: bad magic {buf[:4]!r}")
    (version,) = struct.unpack_from("<I", buf, 4)
    if version != SEGMENT_VERSION:
        raise ContainerError(f"{path}: unsupported segment container version {version}")
    off = 8
    dims = []
    for _ in range(N_SEGMENT_MATRICES):
        dims.append(struct.unpack_from("<II", buf, off))
        off += 8
    out = []
    for rows, cols in dims:
        n = rows * cols
        if off + 4 * n > len(buf):
            raise ContainerError(f"{path}: truncated data")
        out.append(np.frombuffer(buf, dtype="<f4", count=n, offset=off).reshape(rows, cols).astype(np.float32))
        off += 4 * n
    if off != len(buf):
        raise ContainerError(f"{path}: {len(buf) - off} trailing bytes")
    return out


def write_archive(path: str | Path, header: dict, arrays: dict[str, np.ndarray], itemsize: int = 4) -> None:
    """Write named arrays (any shape) plus a JSON header; shapes go into the header."""
    if itemsize not in (4, 8):
        raise ContainerError("itemsize must be 4 or 8")
    dtype = "<f4" if itemsize == 4 else "<f8"
    names = list(arrays)
    header = dict(header)
    header["arrays"] = [{"name": k, "shape": list(np.shape(arrays[k]))} for k in names]
    hbytes = json.dumps(header, sort_keys=True).encode("utf-8")
    mats = [np.ascontiguousarray(np.asarray(arrays[k], dtype=dtype).reshape(1, -1) if np.ndim(arrays[k]) != 2
                                 else np.asarray(arrays[k], dtype=dtype)) for k in names]
    parts = [MAGIC, struct.pack("<II", ARCHIVE_VERSION, len(hbytes)), hbytes,
             struct.pack("<II", len(mats), itemsize)]
    parts += [struct.pack("<II", *m.shape) for m in mats]
    parts += [m.tobytes() for m in mats]
    Path(path).write_bytes(b"".join(parts))


def read_archive(path: str | Path) -> tuple[dict, dict[str, np.ndarray]]:
    buf = Path(path).read_bytes()
    if buf[:4] != MAGIC:
        raise ContainerError(f"{path}: bad magic {buf[:4]!r}")
    version, hlen = struct.unpack_from("<II", buf, 4)
    if version != ARCHIVE_VERSION:
        raise ContainerError(f"{path}: not a version-{ARCHIVE_VERSION} archive (version {version})")
    off = 12
    header = json.loads(buf[off:off + hlen].decode("utf-8"))
    off += hlen
    count, itemsize = struct.unpack_from("<II", buf, off)
    off += 8
    dims = []
    for _ in range(count):
        dims.append(struct.unpack_from("<II", buf, off))
        off += 8
    dtype = "<f4" if itemsize == 4 else "<f8"
    specs = header.pop("arrays")
    arrays = {}
    for spec, (rows, cols) in zip(specs, dims):
        n = rows * cols
        if off + itemsize * n > len(buf):
            raise ContainerError(f"{path}: truncated data")
        a = np.frombuffer(buf, dtype=dtype, count=n, offset=off).copy()
        arrays[spec["name"]] = a.reshape(spec["shape"])
        off += itemsize * n
    return header, arrays
