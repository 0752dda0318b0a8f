"""Life-table baseline: expected remaining lifespan from age alone.

A period life table gives q_x, the probability that a person of exact age
x dies before reaching x + 1. Ages run 0..110 and q_110 is forced to 1, so
nobody survives past 111 in this model. The expected remaining lifespan
uses the complete-expectation convention

    e(x) = sum_{k >= 1} kp_x + 0.5,    kp_x = prod_{j<k} (1 - q_{x+j})

where the half year accounts for deaths happening mid-year on average.
Fractional ages are floored to the table row; the +0.5 term absorbs
sub-year effects. Ages at or beyond 110 return exactly 0.5.
"""

from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .dataset import SampleRecord

MAX_AGE = 110


class LifeTableError(Exception):
    """A life-table file is malformed or inconsistent."""


@dataclass(frozen=True)
class LifeTable:
    """Death probabilities q_x for integer ages 0..110."""

    qx: np.ndarray
    label: str = ""

    def __post_init__(self):
        arr = np.array(self.qx, dtype=np.float64)
        if arr.shape != (MAX_AGE + 1,):
            raise LifeTableError(
                f"life table must cover ages 0..{MAX_AGE}, got {arr.shape[0]} rows")
        if not np.all(np.isfinite(arr)):
            raise LifeTableError("non-finite death probability")
        if np.any(arr < 0.0) or np.any(arr > 1.0):
            raise LifeTableError("death probabilities must lie in [0, 1]")
        arr[MAX_AGE] = 1.0  # cutoff rule: no survival past the last age
        arr.flags.writeable = False
        object.__setattr__(self, "qx", arr)


def load_life_table(path: str, label: str | None = None) -> LifeTable:
    """Read a CSV with (at least) columns Age and qx.

    Ages must be contiguous integers starting at 0; the row "110+" counts
    as 110. Tables ending before 110 are padded with q_x = 1 beyond their
    last age, so toy tables stay valid inputs.
    """
    by_age: dict[int, float] = {}
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not {"Age", "qx"} <= set(reader.fieldnames):
            raise LifeTableError(f"{path}: expected CSV columns Age and qx")
        for lineno, row in enumerate(reader, start=2):
            raw_age = (row["Age"] or "").strip()
            try:
                age = MAX_AGE if raw_age == f"{MAX_AGE}+" else int(raw_age)
                q = float((row["qx"] or "").strip())
            except ValueError:
                raise LifeTableError(f"{path}:{lineno}: bad Age/qx values") from None
            if not 0 <= age <= MAX_AGE:
                raise LifeTableError(f"{path}:{lineno}: age {age} out of range")
            if age in by_age:
                raise LifeTableError(f"{path}:{lineno}: duplicate age {age}")
            by_age[age] = q

    if not by_age:
        raise LifeTableError(f"{path}: empty life table")
    top = max(by_age)
    missing = [a for a in range(top + 1) if a not in by_age]
    if missing:
        raise LifeTableError(f"{path}: missing ages {missing[:5]}")
    qx = np.ones(MAX_AGE + 1)
    for age, q in by_age.items():
        qx[age] = q
    return LifeTable(qx=qx, label=label if label is not None else os.path.basename(path))


def average_tables(tables: Sequence[LifeTable], label: str | None = None) -> LifeTable:
    """Elementwise arithmetic mean of q_x across tables."""
    if not tables:
        raise ValueError("no tables to average")
    qx = np.mean(np.stack([t.qx for t in tables]), axis=0)
    if label is None:
        label = f"average of {len(tables)} tables"
    return LifeTable(qx=qx, label=label)


def expected_remaining_lifespan(table: LifeTable, age: float) -> float:
    """Complete expectation of remaining life at the given fractional age."""
    if not (math.isfinite(age) and age >= 0.0):
        raise ValueError(f"age must be nonnegative and finite, got {age}")
    if age >= MAX_AGE:
        return 0.5
    x = int(math.floor(age))
    survival = 1.0
    curtate = 0.0
    for a in range(x, MAX_AGE + 1):
        survival *= 1.0 - table.qx[a]
        if survival == 0.0:
            break
        curtate += survival
    return curtate + 0.5


def baseline_predictions(records: Sequence[SampleRecord], table: LifeTable) -> np.ndarray:
    """Expected remaining lifespan per record from age at photo time."""
    return np.array([
        expected_remaining_lifespan(table, r.photo_date - r.birth_date)
        for r in records
    ])


def baseline_mae(records: Sequence[SampleRecord], table: LifeTable) -> float:
    """MAE of the life-table expectation against true remaining lifespan."""
    if not records:
        raise ValueError("no records")
    predicted = baseline_predictions(records, table)
    actual = np.array([r.remaining_lifespan for r in records])
    return float(np.mean(np.abs(predicted - actual)))
