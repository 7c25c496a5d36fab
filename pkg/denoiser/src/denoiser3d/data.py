"""Dataset access: CVOL volume files and the JSONL scene manifest.

The CVOL container is the interchange format of the reconstruction toolkit:
magic "CVOL1", little-endian u32 nx/ny/nz, f64 voxel size and origin, a kind
byte (0 complex, 1 real), then float32 payload in x-fastest order. Training
consumes the ground-truth magnitudes of complex scene volumes.
"""

from __future__ import annotations

import json
import os
import struct

import numpy as np

_MAGIC = b"CVOL1"
_HEADER = struct.Struct("<3I6dB")


def read_cvol_magnitudes(path) -> np.ndarray:
    """Magnitude volume of a CVOL file as a (nx, ny, nz) float32 array."""
    with open(path, "rb") as fh:
        if fh.read(len(_MAGIC)) != _MAGIC:
            raise ValueError(f"{path}: not a CVOL file")
        nx, ny, nz, *_rest, kind = _HEADER.unpack(fh.read(_HEADER.size))
        payload = fh.read()
    n = nx * ny * nz
    if kind == 0:
        data = np.abs(np.frombuffer(payload, dtype="<c8", count=n))
    elif kind == 1:
        data = np.frombuffer(payload, dtype="<f4", count=n).copy()
    else:
        raise ValueError(f"{path}: unknown CVOL kind {kind}")
    if data.size != n:
        raise ValueError(f"{path}: truncated payload")
    return data.astype(np.float32).reshape((nx, ny, nz), order="F")


def load_split(manifest_path, split) -> list[np.ndarray]:
    base = os.path.dirname(os.path.abspath(manifest_path))
    volumes = []
    with open(manifest_path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            row = json.loads(line)
            if row["split"] == split:
                volumes.append(read_cvol_magnitudes(os.path.join(base, row["path"])))
    if not volumes:
        raise ValueError(f"{manifest_path}: no scenes in split {split!r}")
    return volumes
