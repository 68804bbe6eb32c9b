"""Text and image feature encoders.

Two interchangeable backends:

- ``clip:<model>`` uses a locally available CLIP checkpoint through
  `transformers` (text embeddings from the projection head, image
  features from the vision tower's patch tokens).
- ``hashed`` is a deterministic offline stand-in: each phrase maps to a
  seeded random unit vector, each image patch to a fixed projection of
  its color statistics. It keeps the full pipeline and every file
  contract testable on machines without model weights.
"""

from __future__ import annotations

import hashlib

import numpy as np

TOKEN_LIMIT = 77  # CLIP text encoder context length


class EncoderError(RuntimeError):
    """Backend could not be constructed or applied."""


class HashedTextEncoder:
    """Deterministic phrase embeddings from a hash-seeded projection."""

    def __init__(self, dim: int = 512):
        self.dim = dim

    def token_count(self, phrase: str) -> int:
        return len(phrase.split())

    def encode(self, phrases) -> np.ndarray:
        out = np.empty((len(phrases), self.dim))
        for i, phrase in enumerate(phrases):
            digest = hashlib.sha256(phrase.encode("utf-8")).digest()
            rng = np.random.default_rng(int.from_bytes(digest[:8], "little"))
            v = rng.normal(size=self.dim)
            out[i] = v / np.linalg.norm(v)
        return out


class HashedImageEncoder:
    """Patch features from color statistics through a fixed projection."""

    def __init__(self, dim: int = 512, patch_size: int = 16, seed: int = 0):
        self.dim = dim
        self.patch_size = patch_size
        rng = np.random.default_rng(seed)
        # polynomial color features -> feature space
        self.projection = rng.normal(size=(10, dim))

    def encode(self, pixels: np.ndarray) -> np.ndarray:
        """(H, W, 3) floats in [0, 1] -> (ph, pw, dim) unit patch features."""
        h, w = pixels.shape[:2]
        ps = self.patch_size
        ph = max(1, (h + ps - 1) // ps)
        pw = max(1, (w + ps - 1) // ps)
        feats = np.empty((ph, pw, self.dim))
        for py in range(ph):
            for px in range(pw):
                patch = pixels[py * ps : (py + 1) * ps, px * ps : (px + 1) * ps]
                r, g, b = patch.reshape(-1, 3).mean(axis=0)
                basis = np.array(
                    [r, g, b, r * r, g * g, b * b, r * g, g * b, r * b, 1.0]
                )
                v = basis @ self.projection
                feats[py, px] = v / max(np.linalg.norm(v), 1e-12)
        return feats


class ClipTextEncoder:
    """CLIP text embeddings via transformers; requires a local checkpoint."""

    def __init__(self, model_name: str):
        try:
            import torch  # noqa: F401
            from transformers import CLIPModel, CLIPTokenizer
        except ImportError as exc:
            raise EncoderError(f"transformers/torch not installed: {exc}") from exc
        try:
            self.tokenizer = CLIPTokenizer.from_pretrained(model_name)
            self.model = CLIPModel.from_pretrained(model_name).eval()
        except Exception as exc:
            raise EncoderError(f"could not load CLIP model {model_name!r}: {exc}") from exc
        self.dim = self.model.config.projection_dim

    def token_count(self, phrase: str) -> int:
        return len(self.tokenizer(phrase)["input_ids"])

    def encode(self, phrases) -> np.ndarray:
        import torch

        tokens = self.tokenizer(list(phrases), padding=True, return_tensors="pt")
        with torch.no_grad():
            features = self.model.get_text_features(**tokens)
        features = features / features.norm(dim=-1, keepdim=True)
        return features.cpu().numpy().astype(np.float64)


class ClipImageEncoder:
    """Patch-token features from the CLIP vision tower."""

    def __init__(self, model_name: str):
        try:
            import torch  # noqa: F401
            from transformers import CLIPModel, CLIPProcessor
        except ImportError as exc:
            raise EncoderError(f"transformers/torch not installed: {exc}") from exc
        try:
            self.processor = CLIPProcessor.from_pretrained(model_name)
            self.model = CLIPModel.from_pretrained(model_name).eval()
        except Exception as exc:
            raise EncoderError(f"could not load CLIP model {model_name!r}: {exc}") from exc
        self.dim = self.model.config.vision_config.hidden_size

    def encode(self, pixels: np.ndarray) -> np.ndarray:
        import torch

        image = (np.clip(pixels, 0.0, 1.0) * 255).astype(np.uint8)
        inputs = self.processor(images=image, return_tensors="pt")
        with torch.no_grad():
            hidden = self.model.vision_model(**inputs).last_hidden_state[0, 1:]
        side = int(np.sqrt(hidden.shape[0]))
        grid = hidden.reshape(side, side, -1).cpu().numpy().astype(np.float64)
        norms = np.maximum(np.linalg.norm(grid, axis=2, keepdims=True), 1e-12)
        return grid / norms


def make_text_encoder(model: str, dim: int = 512):
    if model == "hashed":
        return HashedTextEncoder(dim=dim)
    if model.startswith("clip:"):
        return ClipTextEncoder(model.split(":", 1)[1])
    raise EncoderError(f"unknown text encoder backend {model!r}")


def make_image_encoder(model: str, dim: int = 512, patch_size: int = 16):
    if model == "hashed":
        return HashedImageEncoder(dim=dim, patch_size=patch_size)
    if model.startswith("clip:"):
        return ClipImageEncoder(model.split(":", 1)[1])
    raise EncoderError(f"unknown image encoder backend {model!r}")
