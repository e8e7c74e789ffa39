"""Checkpoint-side bridge for the model hub.

Extracts image and text embeddings from checkpoints (or the deterministic
toy encoder) into the engine's bit-exact store format, and generates class
captions via fixtures or a cached external service. Contains no selection
or reuse logic: the interchange format is the whole contract.
"""

from .captions import (
    CaptionServiceError,
    LiveCaptionService,
    generate_class_captions,
    load_caption_fixtures,
    save_caption_file,
)
from .encoders import OpenClipEncoder, RemoteTextEmbedder, ToyEncoder, resolve_encoder
from .extract import (
    ExtractionJob,
    extract_image_embeddings,
    extract_text_embeddings,
    read_manifest,
)

__version__ = "0.1.0"

__all__ = [
    "ExtractionJob",
    "extract_image_embeddings",
    "extract_text_embeddings",
    "read_manifest",
    "ToyEncoder",
    "OpenClipEncoder",
    "RemoteTextEmbedder",
    "resolve_encoder",
    "LiveCaptionService",
    "CaptionServiceError",
    "generate_class_captions",
    "load_caption_fixtures",
    "save_caption_file",
]
