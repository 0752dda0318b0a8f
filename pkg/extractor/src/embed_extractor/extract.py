"""Manifest-to-EMB1 extraction.

``extract`` walks the manifest in order, preprocesses each image at the
resolution its dataset tag selects, and feeds consecutive same-shape
images to the backbone in batches. Rows land in the output matrix in
manifest order; a single writer then serializes the EMB1 file and the
skip log in one pass, so there is never a partially interleaved file.

An image that cannot be decoded becomes a skip-log entry (id, path,
reason) and no embedding row. Zero rows are never fabricated for broken
inputs: downstream joins rely on every EMB1 row being a real embedding.
Every manifest record is accounted for, as either a row or a skip.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .backbones import load_backbone
from .config import ExtractorConfig
from .emb1 import write_emb1
from .manifest import ImageRecord
from .preprocess import ImageReadError, preprocess_image, size_for_tag


@dataclass(frozen=True)
class SkipRecord:
    """One manifest record that produced no embedding row, and why."""

    id: str
    image_path: str
    reason: str


@dataclass
class ExtractResult:
    ids: list[str]
    skips: list[SkipRecord]
    dim: int
    out_path: str
    skip_log_path: str


def default_skip_log_path(out_path: str) -> str:
    return out_path + ".skips.jsonl"


def write_skip_log(skips: Sequence[SkipRecord], path: str) -> None:
    """Write one JSON object per skipped record; empty file when none."""
    with open(path, "w", encoding="utf-8") as fh:
        for skip in skips:
            fh.write(json.dumps({"id": skip.id, "image_path": skip.image_path,
                                 "reason": skip.reason}) + "\n")


def extract(records: Sequence[ImageRecord], config: ExtractorConfig, out_path: str,
            skip_log_path: str | None = None, backbone=None) -> ExtractResult:
    """Embed every readable image in ``records`` and write EMB1 plus skip log.

    ``backbone`` defaults to ``load_backbone(config.backbone, config.device)``;
    tests inject lightweight substitutes here. Batches are cut at
    ``config.batch_size`` and whenever the next image's resolution differs
    from the pending batch, which keeps mixed faces/whole manifests valid
    without reordering rows.
    """
    if skip_log_path is None:
        skip_log_path = default_skip_log_path(out_path)
    if backbone is None:
        backbone = load_backbone(config.backbone, config.device)

    written_ids: list[str] = []
    row_blocks: list[np.ndarray] = []
    skips: list[SkipRecord] = []
    pending_ids: list[str] = []
    pending_arrays: list[np.ndarray] = []

    def flush() -> None:
        if not pending_ids:
            return
        batch = np.stack(pending_arrays)
        rows = backbone.embed(batch)
        if rows.shape != (len(pending_ids), backbone.dim):
            raise RuntimeError(
                f"backbone {backbone.name} returned shape {rows.shape}, "
                f"expected ({len(pending_ids)}, {backbone.dim})")
        row_blocks.append(np.asarray(rows, dtype=np.float32))
        written_ids.extend(pending_ids)
        pending_ids.clear()
        pending_arrays.clear()

    for record in records:
        size = size_for_tag(record.dataset_tag, config)
        try:
            arr = preprocess_image(record.image_path, size,
                                   config.normalization_mean, config.normalization_std)
        except ImageReadError as exc:
            skips.append(SkipRecord(id=record.id, image_path=record.image_path,
                                    reason=str(exc)))
            continue
        if pending_arrays and pending_arrays[0].shape != arr.shape:
            flush()
        pending_ids.append(record.id)
        pending_arrays.append(arr)
        if len(pending_ids) == config.batch_size:
            flush()
    flush()

    if row_blocks:
        matrix = np.concatenate(row_blocks, axis=0)
    else:
        matrix = np.zeros((0, backbone.dim), dtype=np.float32)
    assert len(written_ids) + len(skips) == len(records)
    write_emb1(written_ids, matrix, out_path)
    write_skip_log(skips, skip_log_path)
    return ExtractResult(ids=written_ids, skips=skips, dim=int(backbone.dim),
                         out_path=out_path, skip_log_path=skip_log_path)
