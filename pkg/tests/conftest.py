import json

import numpy as np
import pytest

from lifespan.dataset import SampleRecord
from lifespan.embeddings import EmbeddingStore


@pytest.fixture
def tiny_store():
    rng = np.random.default_rng(42)
    ids = [f"s{i}" for i in range(12)]
    return EmbeddingStore(ids=ids, data=rng.standard_normal((12, 5)).astype(np.float32))


def make_records(n, start_year=1950.0):
    """n valid records with varied lifespans."""
    records = []
    for i in range(n):
        photo = start_year + 30.0 + (i % 7) * 0.5
        records.append(SampleRecord(
            id=f"r{i:05d}",
            image_path=f"/img/{i}.jpg",
            birth_date=start_year + (i % 3),
            photo_date=photo,
            death_date=photo + 5.0 + (i % 20) * 1.7,
            dataset_tag=("faces", "whole", "legacy")[i % 3],
        ))
    return records


def write_manifest_lines(path, objs):
    with open(path, "w", encoding="utf-8") as fh:
        for obj in objs:
            fh.write(json.dumps(obj) + "\n")
    return str(path)
