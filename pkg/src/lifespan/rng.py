"""Deterministic random-number utilities.

Everything random in this package is keyed by an explicit integer seed and
backed by the Philox-4x64-10 counter-based generator. Each logical use gets
its own 128-bit key, built as ``(seed mod 2**64) + (stream << 64)``, so that
independent stages (splitting, weight init, per-epoch batch shuffles) never
share a random stream even when they share a seed.

``philox_permutation`` implements its own Fisher-Yates shuffle on the raw
64-bit Philox output (rejection sampling, no modulo bias). It depends only on
the Philox stream itself, not on any higher-level generator method, which
makes the result stable across platforms and numpy releases.
"""

from __future__ import annotations

import numpy as np

# Fixed stream ids. New consumers must claim a new constant here.
STREAM_SPLIT = 0
STREAM_INIT = 1
STREAM_EPOCH_BASE = 2  # epoch e shuffles with stream STREAM_EPOCH_BASE + e

_WORD = 1 << 64


def philox_key(seed: int, stream: int = 0) -> int:
    """128-bit Philox key: low word = seed, high word = stream."""
    return (seed % _WORD) + (stream % _WORD) * _WORD


def philox_generator(seed: int, stream: int = 0) -> np.random.Generator:
    """A numpy Generator over Philox keyed by (seed, stream)."""
    return np.random.Generator(np.random.Philox(key=philox_key(seed, stream)))


def philox_permutation(n: int, seed: int, stream: int = 0) -> list[int]:
    """Fisher-Yates permutation of range(n) driven by raw Philox words.

    Positions are visited from n-1 down to 1; the swap index for position j
    is drawn uniformly from [0, j] by rejection sampling on unsigned 64-bit
    words from Philox(key=philox_key(seed, stream)). Identical inputs give
    an identical permutation on every platform.
    """
    if n < 0:
        raise ValueError("permutation size must be non-negative")
    bit_gen = np.random.Philox(key=philox_key(seed, stream))
    buf: list[int] = []

    def next_word() -> int:
        if not buf:
            # reversed so pop() yields words in stream order
            buf.extend(int(w) for w in reversed(bit_gen.random_raw(512)))
        return buf.pop()

    perm = list(range(n))
    for j in range(n - 1, 0, -1):
        bound = j + 1
        limit = _WORD - (_WORD % bound)
        word = next_word()
        while word >= limit:
            word = next_word()
        k = word % bound
        perm[j], perm[k] = perm[k], perm[j]
    return perm
