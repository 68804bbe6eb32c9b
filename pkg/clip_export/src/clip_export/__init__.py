"""CLIP feature exporter for the lesplat engine's file formats."""

from .encoders import TOKEN_LIMIT, EncoderError
from .export import (
    ExportError,
    ExportManifest,
    export_image_features,
    export_text_embeddings,
    read_phrase_list,
)

__version__ = "0.1.0"
