"""Image-to-embedding extraction over JSONL manifests.

The package reads a manifest of image records, preprocesses each image at
the resolution its dataset tag calls for, runs a vision-transformer
backbone's classification token over the batch, and writes the result as
an EMB1 file plus a JSON Lines skip log. It deliberately knows nothing
about training: the EMB1 file and the manifest are its only contracts
with downstream consumers.
"""

from .backbones import REFERENCE_BACKBONE, load_backbone, token_width
from .config import ExtractorConfig
from .emb1 import Emb1WriteError, write_emb1
from .extract import ExtractResult, SkipRecord, extract
from .manifest import ImageRecord, ManifestError, load_extraction_manifest
from .preprocess import ImageReadError, preprocess_image, size_for_tag

__all__ = [
    "REFERENCE_BACKBONE",
    "Emb1WriteError",
    "ExtractResult",
    "ExtractorConfig",
    "ImageReadError",
    "ImageRecord",
    "ManifestError",
    "SkipRecord",
    "extract",
    "load_backbone",
    "load_extraction_manifest",
    "preprocess_image",
    "size_for_tag",
    "token_width",
    "write_emb1",
]
