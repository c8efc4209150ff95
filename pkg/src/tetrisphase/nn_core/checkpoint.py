"""Checkpoint container: magic "TPCK1", length-prefixed JSON architecture
header, then all parameters as 64-bit little-endian floats in declaration
order."""

from __future__ import annotations

import json
import struct

import numpy as np

MAGIC = b"TPCK1"


def save_checkpoint(path, header: dict, params: list[np.ndarray]) -> None:
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        for p in params:
            fh.write(np.ascontiguousarray(p, dtype="<f8").tobytes())


def load_checkpoint(path) -> tuple[dict, np.ndarray]:
    """Returns the header and the flat parameter vector (declaration order)."""
    with open(path, "rb") as fh:
        magic = fh.read(5)
        if magic != MAGIC:
            raise ValueError(f"not a TPCK1 checkpoint: magic {magic!r}")
        (hlen,) = struct.unpack("<I", fh.read(4))
        header = json.loads(fh.read(hlen).decode("utf-8"))
        flat = np.frombuffer(fh.read(), dtype="<f8")
    return header, flat
