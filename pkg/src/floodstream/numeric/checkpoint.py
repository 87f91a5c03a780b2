"""FSCK1 parameter files.

Layout: ``b"FSCK1"``, a little-endian uint32 header length, a UTF-8 JSON
header ``{"names", "shapes", "offsets", "meta"}``, then the raw little-endian
float32 blobs. Offsets are byte positions relative to the end of the header.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from ..errors import MotionFormatError

MAGIC = b"FSCK1"


def save_checkpoint(path, tensors: dict[str, np.ndarray], meta: dict | None = None) -> None:
    names = sorted(tensors)
    blobs, shapes, offsets = [], [], []
    pos = 0
    for name in names:
        arr = np.ascontiguousarray(tensors[name], dtype="<f4")
        shapes.append(list(arr.shape))
        offsets.append(pos)
        blobs.append(arr.tobytes())
        pos += arr.nbytes
    header = json.dumps({"names": names, "shapes": shapes, "offsets": offsets,
                         "meta": meta or {}}, sort_keys=True).encode()
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", len(header)))
        f.write(header)
        for b in blobs:
            f.write(b)


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], dict]:
    raw = Path(path).read_bytes()
    if raw[:5] != MAGIC:
        raise MotionFormatError(f"{path}: bad magic {raw[:5]!r}, expected {MAGIC!r}")
    (hlen,) = struct.unpack("<I", raw[5:9])
    header = json.loads(raw[9:9 + hlen])
    data = raw[9 + hlen:]
    tensors = {}
    for name, shape, off in zip(header["names"], header["shapes"], header["offsets"]):
        n = int(np.prod(shape, dtype=np.int64)) * 4
        if off + n > len(data):
            raise MotionFormatError(
                f"{path}: tensor {name!r} needs bytes [{off}, {off + n}) but payload has {len(data)}")
        tensors[name] = np.frombuffer(data, dtype="<f4", count=n // 4, offset=off).reshape(shape).astype(np.float32)
    return tensors, header.get("meta", {})
