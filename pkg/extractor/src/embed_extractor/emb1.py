"""EMB1 writer.

EMB1 is the binary container downstream training tools read. Layout, all
integers little-endian:

    magic   4 bytes  b"EMB1"
    version u32      1
    N       u32      number of rows
    dim     u32      embedding width
    ids     N times: u16 byte length, then UTF-8 id bytes
    data    N * dim float32, row-major

The writer is intentionally strict: row count must match id count, ids
must be unique and fit a u16 byte length, and the payload is written as
exactly the float32 bits handed in, so a write/read round trip through
any conforming parser is bitwise lossless.
"""

from __future__ import annotations

import struct
from typing import Sequence

import numpy as np

MAGIC = b"EMB1"
VERSION = 1


class Emb1WriteError(Exception):
    """The rows or ids handed to the writer cannot form a valid EMB1 file."""


def write_emb1(ids: Sequence[str], rows: np.ndarray, path: str) -> None:
    """Write ``rows`` (one per id, in order) to ``path`` as EMB1."""
    rows = np.ascontiguousarray(np.asarray(rows), dtype="<f4")
    if rows.ndim != 2:
        raise Emb1WriteError(f"rows must be a 2-D matrix, got shape {rows.shape}")
    n, dim = rows.shape
    if dim < 1:
        raise Emb1WriteError("embedding dim must be positive")
    if len(ids) != n:
        raise Emb1WriteError(f"{len(ids)} ids for {n} rows")
    if len(set(ids)) != len(ids):
        raise Emb1WriteError("duplicate ids")
    parts = [MAGIC, struct.pack("<III", VERSION, n, dim)]
    for sample_id in ids:
        raw = sample_id.encode("utf-8")
        if len(raw) > 0xFFFF:
            raise Emb1WriteError(f"id too long for EMB1: {sample_id!r}")
        parts.append(struct.pack("<H", len(raw)))
        parts.append(raw)
    parts.append(rows.tobytes(order="C"))
    with open(path, "wb") as fh:
        fh.write(b"".join(parts))
