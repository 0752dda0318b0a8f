"""Sample records, manifest files, deterministic splits, target normalization.

A manifest is JSON Lines: one object per sample with keys ``id``,
``image_path``, ``birth_date``, ``photo_date``, ``death_date`` and
``dataset_tag`` (plus an optional ``wikidata_id`` used by curation). All
dates are fractional calendar years. The regression target, remaining
lifespan in years, is always derived as ``death_date - photo_date`` and is
never stored in the file.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, replace
from typing import Iterable, Sequence

import numpy as np

from .rng import STREAM_SPLIT, philox_permutation

DATASET_TAGS = ("faces", "whole", "legacy")

_REQUIRED_KEYS = ("id", "image_path", "birth_date", "photo_date", "death_date", "dataset_tag")


class ManifestError(Exception):
    """A manifest file is missing, malformed, or violates record invariants."""


@dataclass(frozen=True)
class SampleRecord:
    """One person/image with birth, photo and death dates in fractional years."""

    id: str
    image_path: str
    birth_date: float
    photo_date: float
    death_date: float
    dataset_tag: str
    wikidata_id: str | None = None

    @property
    def remaining_lifespan(self) -> float:
        """Years between the photo and death; the regression target."""
        return self.death_date - self.photo_date

    def problems(self) -> list[str]:
        """Invariant violations, empty when the record is valid."""
        out = []
        if not self.id:
            out.append("empty id")
        if self.dataset_tag not in DATASET_TAGS:
            out.append(f"unknown dataset_tag {self.dataset_tag!r}")
        for name in ("birth_date", "photo_date", "death_date"):
            if not math.isfinite(getattr(self, name)):
                out.append(f"non-finite {name}")
        if not out:
            if not self.birth_date < self.photo_date:
                out.append("birth_date must precede photo_date")
            if self.photo_date > self.death_date:
                out.append("death_date precedes photo_date")
        return out


def _record_from_obj(obj: dict, where: str) -> SampleRecord:
    if not isinstance(obj, dict):
        raise ManifestError(f"{where}: expected a JSON object")
    missing = [k for k in _REQUIRED_KEYS if k not in obj]
    if missing:
        raise ManifestError(f"{where}: missing keys {missing}")
    try:
        rec = SampleRecord(
            id=str(obj["id"]),
            image_path=str(obj["image_path"]),
            birth_date=float(obj["birth_date"]),
            photo_date=float(obj["photo_date"]),
            death_date=float(obj["death_date"]),
            dataset_tag=str(obj["dataset_tag"]),
            wikidata_id=str(obj["wikidata_id"]) if obj.get("wikidata_id") is not None else None,
        )
    except (TypeError, ValueError) as exc:
        raise ManifestError(f"{where}: bad field value ({exc})") from exc
    problems = rec.problems()
    if problems:
        raise ManifestError(f"{where}: id={rec.id!r}: {'; '.join(problems)}")
    return rec


def _iter_manifest_lines(path: str):
    if not os.path.exists(path):
        raise ManifestError(f"manifest not found: {path}")
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            yield line_no, line


def load_manifest(path: str) -> list[SampleRecord]:
    """Load and validate a manifest, raising on the first bad line.

    Diagnostics name the file and line number. Duplicate ids are an error.
    """
    records: list[SampleRecord] = []
    seen: set[str] = set()
    for line_no, line in _iter_manifest_lines(path):
        where = f"{path}:{line_no}"
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ManifestError(f"{where}: invalid JSON: {exc}") from exc
        rec = _record_from_obj(obj, where)
        if rec.id in seen:
            raise ManifestError(f"{where}: duplicate id {rec.id!r}")
        seen.add(rec.id)
        records.append(rec)
    return records


def load_manifest_lenient(path: str) -> tuple[list[SampleRecord], list[str]]:
    """Load a manifest, skipping bad records and collecting diagnostics.

    Used by curation, which must not abort a whole batch on one bad row.
    Duplicate ids keep the first occurrence.
    """
    records: list[SampleRecord] = []
    diagnostics: list[str] = []
    seen: set[str] = set()
    for line_no, line in _iter_manifest_lines(path):
        where = f"{path}:{line_no}"
        try:
            obj = json.loads(line)
            rec = _record_from_obj(obj, where)
        except ManifestError as exc:
            diagnostics.append(str(exc))
            continue
        except json.JSONDecodeError as exc:
            diagnostics.append(f"{where}: invalid JSON: {exc}")
            continue
        if rec.id in seen:
            diagnostics.append(f"{where}: duplicate id {rec.id!r} (kept first)")
            continue
        seen.add(rec.id)
        records.append(rec)
    return records, diagnostics


def save_manifest(records: Iterable[SampleRecord], path: str) -> None:
    """Write records as JSON Lines; remaining lifespan is derived, not stored."""
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            obj = {
                "id": rec.id,
                "image_path": rec.image_path,
                "birth_date": rec.birth_date,
                "photo_date": rec.photo_date,
                "death_date": rec.death_date,
                "dataset_tag": rec.dataset_tag,
            }
            if rec.wikidata_id is not None:
                obj["wikidata_id"] = rec.wikidata_id
            fh.write(json.dumps(obj, sort_keys=True) + "\n")


def with_death_date(record: SampleRecord, death_date: float) -> SampleRecord:
    """Copy of ``record`` with an updated death date."""
    return replace(record, death_date=death_date)


@dataclass(frozen=True)
class DatasetSplit:
    """Deterministic train/test partition of a set of sample ids."""

    seed: int
    fraction: float
    train_ids: tuple[str, ...]
    test_ids: tuple[str, ...]

    def to_json_dict(self) -> dict:
        return {
            "seed": self.seed,
            "fraction": self.fraction,
            "train_ids": list(self.train_ids),
            "test_ids": list(self.test_ids),
        }

    @classmethod
    def from_json_dict(cls, obj: dict) -> "DatasetSplit":
        return cls(
            seed=int(obj["seed"]),
            fraction=float(obj["fraction"]),
            train_ids=tuple(obj["train_ids"]),
            test_ids=tuple(obj["test_ids"]),
        )


def split_ids(ids: Sequence[str], seed: int, fraction: float) -> tuple[list[str], list[str]]:
    """Partition ids into (train, test), deterministically keyed by seed.

    Ids are sorted before shuffling, so the result depends only on the id
    set, the seed, and the fraction. The train size is fraction * N rounded
    half up.
    """
    if not ids:
        raise ValueError("cannot split an empty id list")
    if not 0.0 < fraction < 1.0:
        raise ValueError(f"fraction must be in (0, 1), got {fraction}")
    if len(set(ids)) != len(ids):
        raise ValueError("duplicate ids in split input")
    ordered = sorted(ids)
    perm = philox_permutation(len(ordered), seed, stream=STREAM_SPLIT)
    shuffled = [ordered[i] for i in perm]
    train_n = math.floor(fraction * len(ordered) + 0.5)
    return shuffled[:train_n], shuffled[train_n:]


def split_dataset(records: Sequence[SampleRecord], seed: int, fraction: float) -> DatasetSplit:
    """Deterministic train/test split of manifest records."""
    if not records:
        raise ValueError("cannot split an empty record list")
    train, test = split_ids([r.id for r in records], seed, fraction)
    return DatasetSplit(seed=seed, fraction=fraction, train_ids=tuple(train), test_ids=tuple(test))


@dataclass(frozen=True)
class NormalizationStats:
    """Mean/std of the training targets, used to z-score them for the head."""

    target_mean: float
    target_std: float

    def __post_init__(self):
        if not (math.isfinite(self.target_std) and self.target_std > 0.0):
            raise ValueError(f"target_std must be positive and finite, got {self.target_std}")
        if not math.isfinite(self.target_mean):
            raise ValueError("target_mean must be finite")

    def normalize(self, y):
        return (np.asarray(y, dtype=np.float64) - self.target_mean) / self.target_std

    def denormalize(self, z):
        return np.asarray(z, dtype=np.float64) * self.target_std + self.target_mean


def fit_normalization(train_targets: Sequence[float]) -> NormalizationStats:
    """Fit z-scoring stats on training targets only (population std).

    Raises on fewer than two targets or on (near-)constant targets, so the
    standard deviation used for scaling can never be zero.
    """
    arr = np.asarray(list(train_targets), dtype=np.float64)
    if arr.ndim != 1 or arr.size < 2:
        raise ValueError("need at least two training targets")
    if not np.all(np.isfinite(arr)):
        raise ValueError("non-finite training target")
    mean = float(arr.mean())
    std = float(arr.std())
    if not (math.isfinite(std) and std > 0.0):
        raise ValueError("degenerate (constant) training targets")
    return NormalizationStats(target_mean=mean, target_std=std)
