"""Export text embeddings and dense image features for the engine.

Phrase lists are plain UTF-8, one phrase per line. Outputs are the
engine's embedding-table JSON and LEGF grids; the writers here are this
package's own, so the engine's readers independently validate every
exported file.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from .encoders import TOKEN_LIMIT, make_image_encoder, make_text_encoder
from .formats import legf_bytes, table_json

logger = logging.getLogger(__name__)


class ExportError(RuntimeError):
    pass


@dataclass(frozen=True)
class ExportManifest:
    model: str = "hashed"  # "hashed" or "clip:<checkpoint>"
    output_path: str = ""
    normalize: bool = True
    dim: int = 512
    patch_size: int = 16

    def __post_init__(self):
        if not self.output_path:
            raise ValueError("output path is required")


def read_phrase_list(path) -> list[str]:
    """One phrase per line; blank lines ignored."""
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    phrases = [line.strip() for line in lines if line.strip()]
    if not phrases:
        raise ExportError(f"phrase list {path} is empty")
    return phrases


def _dedup(phrases) -> list[str]:
    seen = {}
    for phrase in phrases:
        if phrase in seen:
            logger.warning("duplicate phrase dropped: %r", phrase)
        else:
            seen[phrase] = None
    return list(seen)


def export_text_embeddings(phrases, manifest: ExportManifest) -> str:
    """Write one unit-norm vector per phrase; returns the JSON text.

    Phrases past the encoder's token limit are rejected together, each
    named in the error.
    """
    if not phrases:
        raise ExportError("no phrases to export")
    phrases = _dedup(phrases)
    encoder = make_text_encoder(manifest.model, dim=manifest.dim)
    too_long = [p for p in phrases if encoder.token_count(p) > TOKEN_LIMIT]
    if too_long:
        listing = "; ".join(repr(p[:60]) for p in too_long)
        raise ExportError(
            f"{len(too_long)} phrase(s) exceed the {TOKEN_LIMIT}-token limit: {listing}"
        )
    vectors = encoder.encode(phrases)
    if manifest.normalize:
        vectors = vectors / np.linalg.norm(vectors, axis=1, keepdims=True)
    text = table_json(phrases, vectors)
    Path(manifest.output_path).write_text(text, encoding="utf-8")
    return text


def _bilinear_upsample(grid: np.ndarray, height: int, width: int) -> np.ndarray:
    """(ph, pw, d) patch grid -> (height, width, d), sampling patch centers."""
    ph, pw, d = grid.shape
    ys = (np.arange(height) + 0.5) / height * ph - 0.5
    xs = (np.arange(width) + 0.5) / width * pw - 0.5
    y0 = np.clip(np.floor(ys).astype(int), 0, ph - 1)
    x0 = np.clip(np.floor(xs).astype(int), 0, pw - 1)
    y1 = np.minimum(y0 + 1, ph - 1)
    x1 = np.minimum(x0 + 1, pw - 1)
    wy = np.clip(ys - y0, 0.0, 1.0)[:, None, None]
    wx = np.clip(xs - x0, 0.0, 1.0)[None, :, None]
    top = grid[y0][:, x0] * (1 - wx) + grid[y0][:, x1] * wx
    bottom = grid[y1][:, x0] * (1 - wx) + grid[y1][:, x1] * wx
    return top * (1 - wy) + bottom * wy


def export_image_features(image_path, manifest: ExportManifest) -> bytes:
    """Dense per-pixel features as LEGF bytes (also written to the manifest path)."""
    try:
        with Image.open(image_path) as img:
            rgb = np.asarray(img.convert("RGB"), dtype=np.float64) / 255.0
    except (OSError, UnidentifiedImageError) as exc:
        raise ExportError(f"unreadable image {image_path}: {exc}") from exc
    encoder = make_image_encoder(manifest.model, dim=manifest.dim, patch_size=manifest.patch_size)
    patches = encoder.encode(rgb)
    dense = _bilinear_upsample(patches, rgb.shape[0], rgb.shape[1])
    norms = np.maximum(np.linalg.norm(dense, axis=2, keepdims=True), 1e-12)
    dense = dense / norms
    data = legf_bytes(dense)
    Path(manifest.output_path).write_bytes(data)
    return data
