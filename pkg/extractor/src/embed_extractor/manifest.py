"""Minimal manifest reader for extraction.

The manifest is JSON Lines, one object per record. Extraction only needs
three fields: ``id``, ``image_path``, and ``dataset_tag``. Records missing
``dataset_tag`` fall back to the caller's default tag; every other key is
ignored, so manifests written by downstream tooling (with dates and
provenance attached) load unchanged.

Errors carry ``path:line`` so a broken record can be found by eye. A
malformed manifest fails the whole load: extraction must never silently
drop records the file actually names.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

from .preprocess import KNOWN_TAGS


class ManifestError(Exception):
    """A manifest file is malformed or internally inconsistent."""


@dataclass(frozen=True)
class ImageRecord:
    id: str
    image_path: str
    dataset_tag: str


def load_extraction_manifest(path: str, tag_default: str = "faces") -> list[ImageRecord]:
    """Read ``path`` into ImageRecords, in file order."""
    if tag_default not in KNOWN_TAGS:
        raise ManifestError(
            f"tag_default must be one of {KNOWN_TAGS}, got {tag_default!r}")
    records: list[ImageRecord] = []
    seen: set[str] = set()
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            where = f"{path}:{lineno}"
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ManifestError(f"{where}: invalid JSON: {exc}") from exc
            if not isinstance(obj, dict):
                raise ManifestError(f"{where}: record must be a JSON object")
            for key in ("id", "image_path"):
                if not isinstance(obj.get(key), str) or not obj.get(key):
                    raise ManifestError(f"{where}: missing or empty {key!r}")
            tag = obj.get("dataset_tag", tag_default)
            if tag is None:
                tag = tag_default
            if tag not in KNOWN_TAGS:
                raise ManifestError(
                    f"{where}: unknown dataset_tag {tag!r}: expected one of {KNOWN_TAGS}")
            if obj["id"] in seen:
                raise ManifestError(f"{where}: duplicate id {obj['id']!r}")
            seen.add(obj["id"])
            records.append(ImageRecord(id=obj["id"], image_path=obj["image_path"],
                                       dataset_tag=tag))
    if not records:
        raise ManifestError(f"{path}: manifest has no records")
    return records
