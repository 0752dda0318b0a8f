"""EMB1 embedding container: N ids plus an N x dim float32 matrix.

File layout (all integers little-endian):

    magic   4 bytes  b"EMB1"
    version u32      1
    N       u32      number of rows
    dim     u32      embedding width
    ids     N times: u16 byte length, then UTF-8 id bytes
    data    N * dim float32, row-major

Round-trips are bitwise lossless for any float32 payload, including NaN
bit patterns.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

MAGIC = b"EMB1"
VERSION = 1
HEADER_SIZE = 16  # magic + version + N + dim


class EmbeddingFormatError(Exception):
    """An EMB1 file is corrupt, truncated, or internally inconsistent."""


@dataclass
class EmbeddingStore:
    """In-memory EMB1 contents: row i of ``data`` belongs to ``ids[i]``."""

    ids: list[str]
    data: np.ndarray

    def __post_init__(self):
        self.data = np.ascontiguousarray(self.data, dtype=np.float32)
        if self.data.ndim != 2:
            raise ValueError("embedding data must be a 2-D matrix")
        if len(self.ids) != self.data.shape[0]:
            raise ValueError(
                f"id count {len(self.ids)} does not match row count {self.data.shape[0]}"
            )
        if self.data.shape[1] < 1:
            raise ValueError("embedding dim must be positive")
        if len(set(self.ids)) != len(self.ids):
            raise ValueError("duplicate ids in embedding store")
        self._index = {sample_id: i for i, sample_id in enumerate(self.ids)}

    @property
    def dim(self) -> int:
        return int(self.data.shape[1])

    def __len__(self) -> int:
        return len(self.ids)

    def __contains__(self, sample_id: str) -> bool:
        return sample_id in self._index

    def row(self, sample_id: str) -> np.ndarray:
        try:
            return self.data[self._index[sample_id]]
        except KeyError:
            raise KeyError(f"unknown sample id {sample_id!r}") from None

    def rows(self, ids) -> np.ndarray:
        """Gather rows for ``ids`` in order, as a new (len(ids), dim) matrix."""
        try:
            idx = [self._index[i] for i in ids]
        except KeyError as exc:
            raise KeyError(f"unknown sample id {exc.args[0]!r}") from None
        return self.data[idx]


def write_embeddings(store: EmbeddingStore, path: str) -> None:
    """Serialize a store to an EMB1 file."""
    n, dim = store.data.shape
    parts = [MAGIC, struct.pack("<III", VERSION, n, dim)]
    for sample_id in store.ids:
        raw = sample_id.encode("utf-8")
        if len(raw) > 0xFFFF:
            raise EmbeddingFormatError(f"id too long for EMB1: {sample_id!r}")
        parts.append(struct.pack("<H", len(raw)))
        parts.append(raw)
    parts.append(store.data.astype("<f4", copy=False).tobytes(order="C"))
    with open(path, "wb") as fh:
        fh.write(b"".join(parts))


def read_embeddings(path: str) -> EmbeddingStore:
    """Parse and validate an EMB1 file."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < HEADER_SIZE:
        raise EmbeddingFormatError(f"{path}: truncated header")
    if blob[:4] != MAGIC:
        raise EmbeddingFormatError(f"{path}: bad magic {blob[:4]!r}, expected {MAGIC!r}")
    version, n, dim = struct.unpack_from("<III", blob, 4)
    if version != VERSION:
        raise EmbeddingFormatError(f"{path}: unsupported version {version}")
    if dim < 1:
        raise EmbeddingFormatError(f"{path}: non-positive dim {dim}")

    offset = HEADER_SIZE
    ids: list[str] = []
    for _ in range(n):
        if offset + 2 > len(blob):
            raise EmbeddingFormatError(f"{path}: truncated id block")
        (id_len,) = struct.unpack_from("<H", blob, offset)
        offset += 2
        if offset + id_len > len(blob):
            raise EmbeddingFormatError(f"{path}: truncated id block")
        ids.append(blob[offset : offset + id_len].decode("utf-8"))
        offset += id_len

    payload = n * dim * 4
    if len(blob) - offset != payload:
        raise EmbeddingFormatError(
            f"{path}: payload is {len(blob) - offset} bytes, expected {payload}"
        )
    data = np.frombuffer(blob, dtype="<f4", count=n * dim, offset=offset).reshape(n, dim)
    try:
        return EmbeddingStore(ids=ids, data=data.copy())
    except ValueError as exc:
        raise EmbeddingFormatError(f"{path}: {exc}") from exc
