"""Image loading, per-tag resolution, and normalization.

Face crops and legacy face images are resized to the face resolution;
whole images get the larger whole-image resolution so fine detail
survives. Resizing goes straight to the target square with bicubic
interpolation, then pixels are scaled to [0, 1] and normalized per
channel with the configured constants. Output is a float32 (3, S, S)
array in channel-height-width order.

Anything that stops an image from being decoded raises ``ImageReadError``
with the path in the message; callers turn that into a skip-log entry
rather than fabricating a row.
"""

from __future__ import annotations

import numpy as np
from PIL import Image, UnidentifiedImageError

FACE_TAGS = ("faces", "legacy")
WHOLE_TAGS = ("whole",)
KNOWN_TAGS = FACE_TAGS + WHOLE_TAGS


class ImageReadError(Exception):
    """An image file is missing, truncated, or not decodable."""


def size_for_tag(tag: str, config) -> int:
    """Square resolution for a dataset tag under ``config``."""
    if tag in FACE_TAGS:
        return config.face_size
    if tag in WHOLE_TAGS:
        return config.whole_size
    raise ValueError(f"unknown dataset_tag {tag!r}: expected one of {KNOWN_TAGS}")


def preprocess_image(path: str, size: int, mean, std) -> np.ndarray:
    """Load ``path``, resize to ``size`` x ``size``, normalize, return CHW float32."""
    try:
        with Image.open(path) as img:
            img.load()
            rgb = img.convert("RGB")
    except FileNotFoundError:
        raise ImageReadError(f"{path}: file not found") from None
    except (UnidentifiedImageError, OSError, ValueError, SyntaxError) as exc:
        raise ImageReadError(f"{path}: {exc}") from exc
    resized = rgb.resize((size, size), Image.Resampling.BICUBIC)
    arr = np.asarray(resized, dtype=np.float32) / np.float32(255.0)
    mean_arr = np.asarray(mean, dtype=np.float32).reshape(1, 1, 3)
    std_arr = np.asarray(std, dtype=np.float32).reshape(1, 1, 3)
    arr = (arr - mean_arr) / std_arr
    return np.ascontiguousarray(arr.transpose(2, 0, 1))
