"""Bit-exact file formats shared across the pipeline.

LEGF is the binary grid carrier: magic "LEGF", then version, height,
width, depth as little-endian u32, then height*width*depth float32
values, row-major with depth fastest. Embedding tables travel as JSON
(float64 fidelity) and may carry the codebook. Images use binary PPM/PGM.

Readers reject malformed input with `FormatError` carrying a stable
``code``; they never raise anything else on arbitrary bytes.
"""

from __future__ import annotations

import json
import struct

import numpy as np

from .quantize import Codebook
from .relevancy import EmbeddingTable

LEGF_MAGIC = b"LEGF"
LEGF_VERSION = 1
_HEADER = struct.Struct("<4sIIII")

EMBEDDING_TABLE_VERSION = 1
_UNIT_TOL = 1e-6


class FormatError(ValueError):
    """Malformed or invalid serialized data; ``code`` names the failure."""

    def __init__(self, code: str, message: str):
        super().__init__(message)
        self.code = code


# --- LEGF grids -------------------------------------------------------------


def write_legf(grid: np.ndarray) -> bytes:
    g = np.asarray(grid)
    if g.ndim != 3:
        raise FormatError("bad_shape", f"grid must be 3-D (H, W, D), got shape {g.shape}")
    if not np.all(np.isfinite(g)):
        raise FormatError("non_finite", "grid contains NaN or infinite values")
    h, w, d = g.shape
    header = _HEADER.pack(LEGF_MAGIC, LEGF_VERSION, h, w, d)
    return header + g.astype("<f4").tobytes()


def read_legf(data: bytes) -> np.ndarray:
    if len(data) < _HEADER.size:
        raise FormatError("truncated", f"header needs {_HEADER.size} bytes, got {len(data)}")
    magic, version, h, w, d = _HEADER.unpack_from(data)
    if magic != LEGF_MAGIC:
        raise FormatError("bad_magic", f"expected magic {LEGF_MAGIC!r}, got {magic!r}")
    if version != LEGF_VERSION:
        raise FormatError("bad_version", f"unsupported version {version}")
    expected = 4 * h * w * d
    payload = data[_HEADER.size :]
    if len(payload) < expected:
        raise FormatError("truncated", f"payload needs {expected} bytes, got {len(payload)}")
    if len(payload) > expected:
        raise FormatError("trailing_data", f"{len(payload) - expected} unexpected trailing bytes")
    return np.frombuffer(payload, dtype="<f4").reshape(h, w, d).copy()


# --- embedding tables -------------------------------------------------------


def write_embedding_table(table: EmbeddingTable, codebook: Codebook | None = None) -> str:
    doc = {
        "version": EMBEDDING_TABLE_VERSION,
        "dim": table.dim,
        "entries": [
            {"phrase": phrase, "vector": table.vectors[i].tolist()}
            for i, phrase in enumerate(table.phrases)
        ],
    }
    if codebook is not None:
        if codebook.dim != table.dim:
            raise FormatError("dim_mismatch", "codebook dimension differs from table dimension")
        doc["codebook"] = codebook.entries.tolist()
    return json.dumps(doc, indent=2)


def read_embedding_table(text: str) -> tuple[EmbeddingTable, Codebook | None]:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise FormatError("bad_json", f"not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise FormatError("bad_json", "top level must be an object")
    if doc.get("version") != EMBEDDING_TABLE_VERSION:
        raise FormatError("bad_version", f"unsupported version {doc.get('version')!r}")
    try:
        dim = int(doc["dim"])
        entries = doc["entries"]
        phrases = [str(e["phrase"]) for e in entries]
        vectors = np.asarray([e["vector"] for e in entries], dtype=np.float64)
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError("bad_structure", f"malformed table document: {exc}") from exc
    if len(phrases) == 0:
        raise FormatError("bad_structure", "table has no entries")
    if vectors.ndim != 2 or vectors.shape[1] != dim:
        raise FormatError("dim_mismatch", f"vectors must all have length {dim}")
    if len(set(phrases)) != len(phrases):
        raise FormatError("duplicate_phrase", "phrases must be unique")
    if not np.all(np.isfinite(vectors)):
        raise FormatError("non_finite", "vectors must be finite")
    norms = np.linalg.norm(vectors, axis=1)
    if np.any(np.abs(norms - 1.0) > _UNIT_TOL):
        raise FormatError("non_unit", "vectors must be unit norm within 1e-6")
    table = EmbeddingTable(phrases=tuple(phrases), vectors=vectors, provenance="exported")

    codebook = None
    if "codebook" in doc:
        try:
            entries = np.asarray(doc["codebook"], dtype=np.float64)
        except (TypeError, ValueError) as exc:
            raise FormatError("bad_structure", f"malformed codebook: {exc}") from exc
        if entries.ndim != 2 or entries.shape[1] != dim:
            raise FormatError("dim_mismatch", "codebook rows must match the table dimension")
        try:
            codebook = Codebook(entries=entries)
        except ValueError as exc:
            raise FormatError("non_unit", str(exc)) from exc
    return table, codebook


# --- PPM / PGM images --------------------------------------------------------


def _quantize_u8(values: np.ndarray) -> np.ndarray:
    # round half up, then clamp
    scaled = np.floor(np.clip(values, 0.0, 1.0) * 255.0 + 0.5)
    return np.clip(scaled, 0, 255).astype(np.uint8)


def write_ppm(pixels: np.ndarray) -> bytes:
    """Binary PPM (P6, 8-bit) from (H, W, 3) floats in [0, 1]."""
    p = np.asarray(pixels)
    if p.ndim != 3 or p.shape[2] != 3:
        raise FormatError("bad_shape", f"pixels must be (H, W, 3), got {p.shape}")
    h, w = p.shape[:2]
    return f"P6\n{w} {h}\n255\n".encode() + _quantize_u8(p).tobytes()


def write_pgm(values: np.ndarray) -> bytes:
    """Binary PGM (P5, 8-bit) from (H, W) floats in [0, 1] or bools."""
    v = np.asarray(values)
    if v.ndim != 2:
        raise FormatError("bad_shape", f"values must be 2-D, got shape {v.shape}")
    if v.dtype == bool:
        data = np.where(v, 255, 0).astype(np.uint8)
    else:
        data = _quantize_u8(v.astype(np.float64))
    h, w = v.shape
    return f"P5\n{w} {h}\n255\n".encode() + data.tobytes()


def _read_netpbm(data: bytes, magic: bytes, channels: int) -> np.ndarray:
    if not data.startswith(magic):
        raise FormatError("bad_magic", f"expected {magic.decode()} image")
    fields = []
    pos = 2
    while len(fields) < 3:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if pos < len(data) and data[pos : pos + 1] == b"#":
            while pos < len(data) and data[pos : pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        token = data[start:pos]
        if not token.isdigit():
            raise FormatError("bad_header", f"malformed header token {token!r}")
        fields.append(int(token))
    pos += 1  # single whitespace after maxval
    w, h, maxval = fields
    if maxval != 255:
        raise FormatError("bad_header", f"only 8-bit images supported, maxval={maxval}")
    expected = w * h * channels
    payload = data[pos : pos + expected]
    if len(payload) < expected:
        raise FormatError("truncated", f"pixel data needs {expected} bytes, got {len(payload)}")
    arr = np.frombuffer(payload, dtype=np.uint8)
    return arr.reshape((h, w) if channels == 1 else (h, w, channels))


def read_pgm(data: bytes) -> np.ndarray:
    """8-bit grayscale values as a (H, W) uint8 array."""
    return _read_netpbm(data, b"P5", 1)


def read_ppm(data: bytes) -> np.ndarray:
    """8-bit RGB values as a (H, W, 3) uint8 array."""
    return _read_netpbm(data, b"P6", 3)
