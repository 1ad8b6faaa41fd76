"""Binary tensor dumps and checkpoint manifests.

Dump layout (all integers little-endian):

    magic   4 bytes  b"RCTD"
    version u32      currently 1
    dtype   u8       0 = float32, 1 = float64
    rank    u8
    dims    u64 * rank
    data    row-major little-endian payload

A checkpoint is a directory of one dump per named array plus ``manifest.json``
mapping each name to its file, shape and role.
"""
from __future__ import annotations

import json
import os
import struct

import numpy as np

MAGIC = b"RCTD"
VERSION = 1

_DTYPE_CODES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}
_CODES_BY_KIND = {np.dtype(np.float32): 0, np.dtype(np.float64): 1}

MANIFEST_NAME = "manifest.json"


def write_tensor(path: str | os.PathLike, array: np.ndarray) -> None:
    """Write ``array`` (float32 or float64) to ``path`` in dump format."""
    arr = np.asarray(array, order="C")  # ascontiguousarray would promote rank 0 to 1
    if arr.dtype not in _CODES_BY_KIND:
        raise ValueError(f"unsupported dtype {arr.dtype}; expected float32 or float64")
    code = _CODES_BY_KIND[arr.dtype]
    if arr.ndim > 255:
        raise ValueError("rank exceeds u8 range")
    header = MAGIC + struct.pack("<IBB", VERSION, code, arr.ndim)
    header += struct.pack(f"<{arr.ndim}Q", *arr.shape) if arr.ndim else b""
    payload = arr.astype(arr.dtype.newbyteorder("<"), copy=False).tobytes(order="C")
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(payload)


def read_tensor(path: str | os.PathLike) -> np.ndarray:
    """Read a dump written by :func:`write_tensor`. Rejects malformed files."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != MAGIC:
        raise ValueError(f"{path}: bad magic {blob[:4]!r}")
    if len(blob) < 10:
        raise ValueError(f"{path}: truncated header")
    version, code, rank = struct.unpack_from("<IBB", blob, 4)
    if version != VERSION:
        raise ValueError(f"{path}: unsupported version {version}")
    if code not in _DTYPE_CODES:
        raise ValueError(f"{path}: unknown dtype code {code}")
    offset = 10
    if len(blob) < offset + 8 * rank:
        raise ValueError(f"{path}: truncated dims")
    dims = struct.unpack_from(f"<{rank}Q", blob, offset) if rank else ()
    offset += 8 * rank
    dtype = _DTYPE_CODES[code]
    expected = int(np.prod(dims, dtype=np.int64)) * dtype.itemsize if rank else dtype.itemsize
    if len(blob) - offset != expected:
        raise ValueError(
            f"{path}: payload size mismatch (got {len(blob) - offset} bytes, expected {expected})"
        )
    flat = np.frombuffer(blob, dtype=dtype, count=expected // dtype.itemsize, offset=offset)
    # native-endian copy so downstream code never sees a byte-swapped view
    return flat.astype(dtype.newbyteorder("="), copy=True).reshape(dims)


def save_checkpoint(
    dir_path: str | os.PathLike,
    arrays: dict[str, np.ndarray],
    roles: dict[str, str] | None = None,
) -> str:
    """Write one dump per array plus a manifest. Returns the manifest path."""
    os.makedirs(dir_path, exist_ok=True)
    roles = roles or {}
    manifest = {}
    for name, arr in arrays.items():
        fname = name.replace("/", ".") + ".rctd"
        write_tensor(os.path.join(dir_path, fname), np.asarray(arr))
        manifest[name] = {
            "file": fname,
            "shape": list(np.asarray(arr).shape),
            "role": roles.get(name, "parameter"),
        }
    manifest_path = os.path.join(dir_path, MANIFEST_NAME)
    with open(manifest_path, "w") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True)
        fh.write("\n")
    return manifest_path


def load_checkpoint(path: str | os.PathLike) -> tuple[dict[str, np.ndarray], dict[str, str]]:
    """Load a checkpoint from a manifest path (or its directory).

    Returns ``(arrays, roles)``. Shape mismatches against the manifest are
    rejected.
    """
    path = str(path)
    if os.path.isdir(path):
        path = os.path.join(path, MANIFEST_NAME)
    with open(path) as fh:
        manifest = json.load(fh)
    base = os.path.dirname(path)
    arrays: dict[str, np.ndarray] = {}
    roles: dict[str, str] = {}
    for name, entry in manifest.items():
        arr = read_tensor(os.path.join(base, entry["file"]))
        if list(arr.shape) != list(entry["shape"]):
            raise ValueError(
                f"checkpoint entry {name!r}: shape {list(arr.shape)} does not match "
                f"manifest {entry['shape']}"
            )
        arrays[name] = arr
        roles[name] = entry.get("role", "parameter")
    return arrays, roles
