"""Checkpoints: a JSON manifest plus one raw little-endian float64 blob per array.

Blob layout: magic ``b"HRC1"``, uint32 ndim, ndim x uint64 dims, then the
row-major float64 payload, all little-endian.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"HRC1"
MANIFEST = "manifest.json"


def write_blob(path, array):
    arr = np.ascontiguousarray(array, dtype="<f8")
    header = MAGIC + struct.pack("<I", arr.ndim) + struct.pack(f"<{arr.ndim}Q", *arr.shape)
    Path(path).write_bytes(header + arr.tobytes())


def read_blob(path):
    raw = Path(path).read_bytes()
    if raw[:4] != MAGIC:
        raise ValueError(f"{path}: not a checkpoint blob")
    (ndim,) = struct.unpack_from("<I", raw, 4)
    shape = struct.unpack_from(f"<{ndim}Q", raw, 8)
    offset = 8 + 8 * ndim
    count = int(np.prod(shape)) if ndim else 1
    if len(raw) - offset != 8 * count:
        raise ValueError(f"{path}: payload size does not match shape {shape}")
    return np.frombuffer(raw, dtype="<f8", offset=offset, count=count).reshape(shape).astype(np.float64)


def _blob_name(name):
    return name.replace("/", "_") + ".bin"


def save_checkpoint(directory, arrays, meta=None):
    """Write ``arrays`` (name -> ndarray) and ``meta`` (JSON-able) under ``directory``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    entries = []
    for name in sorted(arrays):
        fname = _blob_name(name)
        write_blob(directory / fname, arrays[name])
        entries.append({"name": name, "file": fname, "shape": list(np.shape(arrays[name]))})
    manifest = {"format": "horace-checkpoint", "version": 1, "meta": meta or {}, "tensors": entries}
    (directory / MANIFEST).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return directory


def load_checkpoint(directory):
    """Return ``(arrays, meta)``."""
    directory = Path(directory)
    manifest = json.loads((directory / MANIFEST).read_text())
    if manifest.get("format") != "horace-checkpoint":
        raise ValueError(f"{directory}: not a checkpoint directory")
    arrays = {}
    for entry in manifest["tensors"]:
        arr = read_blob(directory / entry["file"])
        if list(arr.shape) != entry["shape"]:
            raise ValueError(f"{entry['name']}: manifest shape {entry['shape']} != blob shape {list(arr.shape)}")
        arrays[entry["name"]] = arr
    return arrays, manifest["meta"]
