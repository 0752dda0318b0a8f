"""Shared fixtures: tiny PNG factories and a manifest writer."""

import json

import numpy as np
import pytest
from PIL import Image


def _gradient_array(width, height, tint):
    arr = np.zeros((height, width, 3), dtype=np.uint8)
    arr[:, :, 0] = np.linspace(0, 255, width, dtype=np.uint8)[None, :]
    arr[:, :, 1] = tint % 256
    arr[:, :, 2] = 255 - arr[:, :, 0]
    return arr


@pytest.fixture
def make_png(tmp_path):
    """Write a small RGB gradient PNG and return its path."""

    def make(name, width=64, height=64, tint=0):
        path = tmp_path / name
        Image.fromarray(_gradient_array(width, height, tint)).save(path)
        return str(path)

    return make


@pytest.fixture
def make_solid_png(tmp_path):
    """Write a single-color PNG and return its path."""

    def make(name, rgb, width=32, height=32):
        path = tmp_path / name
        arr = np.empty((height, width, 3), dtype=np.uint8)
        arr[:, :] = rgb
        Image.fromarray(arr).save(path)
        return str(path)

    return make


@pytest.fixture
def write_manifest(tmp_path):
    """Write rows (dicts, or raw strings for malformed lines) as JSONL."""

    def write(rows, name="manifest.jsonl"):
        path = tmp_path / name
        with open(path, "w", encoding="utf-8") as fh:
            for row in rows:
                fh.write(row if isinstance(row, str) else json.dumps(row))
                fh.write("\n")
        return str(path)

    return write
