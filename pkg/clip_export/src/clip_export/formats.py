"""Writers for the engine's on-disk formats.

Implemented independently of the engine so that files round-tripping
through its readers actually exercises the format contract:

- embedding table: JSON {version, dim, entries: [{phrase, vector}]},
  vectors as float64 lists;
- LEGF grid: magic "LEGF", version/height/width/depth as little-endian
  u32, then H*W*D little-endian float32, row-major, depth fastest.
"""

from __future__ import annotations

import json
import struct

import numpy as np

TABLE_VERSION = 1
LEGF_MAGIC = b"LEGF"
LEGF_VERSION = 1


def table_json(phrases, vectors) -> str:
    vectors = np.asarray(vectors, dtype=np.float64)
    doc = {
        "version": TABLE_VERSION,
        "dim": int(vectors.shape[1]),
        "entries": [
            {"phrase": phrase, "vector": vectors[i].tolist()}
            for i, phrase in enumerate(phrases)
        ],
    }
    return json.dumps(doc, indent=2)


def legf_bytes(grid) -> bytes:
    g = np.asarray(grid)
    if g.ndim != 3:
        raise ValueError(f"grid must be (H, W, D), got shape {g.shape}")
    if not np.all(np.isfinite(g)):
        raise ValueError("grid must be finite")
    h, w, d = g.shape
    header = struct.pack("<4sIIII", LEGF_MAGIC, LEGF_VERSION, h, w, d)
    return header + g.astype("<f4").tobytes()
