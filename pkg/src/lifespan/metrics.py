"""Accuracy and calibration metrics for mean-variance predictions.

Error conventions, all in years:

    e_i      = |y_i - mu_i|          true absolute error of sample i
    e_hat_i  = sqrt(2/pi) * sigma_i  predicted absolute error (Gaussian)

Calibration compares the two at three resolutions:

    ece_one        |mean e - mean e_hat|, one global bucket
    ece_bucketed   (1/N) * sum_b n_b * |e_b - e_hat_b| over B buckets
    ece_pointwise  mean |e_i - e_hat_i|

With one bucket the bucketed form collapses to ece_one exactly (it is
computed as sum over buckets of (n_b/N) * |e_b - e_hat_b|, so the single
term is multiplied by exactly 1.0). The triangle inequality gives the
ordering ece_one <= ece_bucketed <= ece_pointwise on any input.

Mean GNLL is reported in normalized target units: per sample
0.5 * (log sigma_n^2 + r_n^2 / sigma_n^2) with sigma_n = sigma / target_std
and r_n = (y - mu) / target_std. This matches the units the head trains in
and is the convention for every mean_gnll figure this package prints.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .dataset import NormalizationStats
from .head import GAUSS_ABS_ERROR_FACTOR, Prediction

BUCKETING_MODES = ("by_true_target", "by_predicted_mu")

DEFAULT_BUCKETS = 10
DEFAULT_BUCKET_MAX = 60.0


@dataclass(frozen=True)
class BucketStats:
    """One reliability-table row: errors of samples whose bucketing value
    falls in [lo, hi). Empty buckets keep count 0 and zero errors."""

    index: int  # 1-based
    lo: float
    hi: float
    count: int
    true_mae: float
    predicted_mae: float

    def to_json_dict(self) -> dict:
        return {
            "index": self.index,
            "lo": self.lo,
            "hi": self.hi,
            "count": self.count,
            "true_mae": self.true_mae,
            "predicted_mae": self.predicted_mae,
        }


@dataclass(frozen=True)
class EvalReport:
    mae: float
    mean_gnll: float
    ece_bucketed: float
    ece_one: float
    ece_pointwise: float
    buckets: tuple[BucketStats, ...]
    bucketing_mode: str

    def to_json_dict(self) -> dict:
        return {
            "mae": self.mae,
            "mean_gnll": self.mean_gnll,
            "ece_bucketed": self.ece_bucketed,
            "ece_one": self.ece_one,
            "ece_pointwise": self.ece_pointwise,
            "bucketing_mode": self.bucketing_mode,
            "n_samples": int(sum(b.count for b in self.buckets)),
            "buckets": [b.to_json_dict() for b in self.buckets],
        }


def _error_arrays(predictions: Sequence[Prediction], targets) -> tuple[np.ndarray, ...]:
    """(mu, sigma, e, e_hat, y) as float64 arrays, validated."""
    y = np.asarray(targets, dtype=np.float64).ravel()
    if len(predictions) == 0:
        raise ValueError("no predictions")
    if y.shape != (len(predictions),):
        raise ValueError(
            f"got {len(predictions)} predictions but {y.size} targets")
    mu = np.array([p.mu for p in predictions], dtype=np.float64)
    sigma = np.array([p.sigma for p in predictions], dtype=np.float64)
    e_hat = np.array([p.expected_abs_error for p in predictions], dtype=np.float64)
    if not (np.all(np.isfinite(y)) and np.all(np.isfinite(mu))):
        raise ValueError("non-finite target or prediction mean")
    return mu, sigma, np.abs(y - mu), e_hat, y


def mae(predictions: Sequence[Prediction], targets) -> float:
    """Mean absolute error of the predicted means, in years."""
    _, _, e, _, _ = _error_arrays(predictions, targets)
    return float(np.mean(e))


def expected_abs_error(sigma: float) -> float:
    """Mean absolute deviation of a Gaussian with the given sigma."""
    if not (math.isfinite(sigma) and sigma > 0.0):
        raise ValueError(f"sigma must be positive and finite, got {sigma}")
    return GAUSS_ABS_ERROR_FACTOR * sigma


def mean_gnll(predictions: Sequence[Prediction], targets,
              stats: NormalizationStats) -> float:
    """Mean Gaussian negative log-likelihood in normalized target units."""
    mu, sigma, _, _, y = _error_arrays(predictions, targets)
    sigma_n = sigma / stats.target_std
    r_n = (y - mu) / stats.target_std
    return float(np.mean(0.5 * (np.log(sigma_n**2) + r_n**2 / sigma_n**2)))


def _bucket_indices(values: np.ndarray, buckets: int, bucket_max: float | None):
    """0-based bucket index per sample plus the (lo, hi) edge list.

    Values outside [0, span) are clamped into the nearest end bucket, so
    every sample is counted exactly once.
    """
    if buckets < 1:
        raise ValueError("need at least one bucket")
    if bucket_max is None:
        span = float(values.max())
        if buckets > 1 and values.min() == values.max():
            raise ValueError(
                "all samples share one bucketing value; "
                "data-derived bucket edges are degenerate (pass an explicit bucket_max)")
        if span <= 0.0:
            span = 1.0  # single-bucket fallback; only reachable with buckets == 1
    else:
        span = float(bucket_max)
        if span <= 0.0:
            raise ValueError("bucket_max must be positive")
    width = span / buckets
    idx = np.clip(np.floor(values / width).astype(np.int64), 0, buckets - 1)
    edges = [(width * b, width * (b + 1)) for b in range(buckets)]
    return idx, edges


def ece_bucketed(predictions: Sequence[Prediction], targets,
                 buckets: int = DEFAULT_BUCKETS, mode: str = "by_true_target",
                 bucket_max: float | None = DEFAULT_BUCKET_MAX,
                 ) -> tuple[float, list[BucketStats]]:
    """Count-weighted calibration gap over equal-width buckets.

    Samples are grouped by true remaining lifespan (default) or by the
    predicted mean; each bucket contributes (n_b/N) * |e_b - e_hat_b| and
    empty buckets contribute nothing. bucket_max=None derives the span
    from the data maximum instead of the fixed default.
    """
    if mode not in BUCKETING_MODES:
        raise ValueError(f"mode must be one of {BUCKETING_MODES}, got {mode!r}")
    mu, _, e, e_hat, y = _error_arrays(predictions, targets)
    values = y if mode == "by_true_target" else mu
    idx, edges = _bucket_indices(values, buckets, bucket_max)

    n = y.size
    total = 0.0
    table = []
    for b in range(buckets):
        mask = idx == b
        count = int(mask.sum())
        if count:
            e_b = float(np.mean(e[mask]))
            e_hat_b = float(np.mean(e_hat[mask]))
            total += (count / n) * abs(e_b - e_hat_b)
        else:
            e_b = e_hat_b = 0.0
        lo, hi = edges[b]
        table.append(BucketStats(index=b + 1, lo=lo, hi=hi, count=count,
                                 true_mae=e_b, predicted_mae=e_hat_b))
    return total, table


def ece_one(predictions: Sequence[Prediction], targets) -> float:
    """Absolute gap between mean true and mean predicted absolute error."""
    _, _, e, e_hat, _ = _error_arrays(predictions, targets)
    return abs(float(np.mean(e)) - float(np.mean(e_hat)))


def ece_pointwise(predictions: Sequence[Prediction], targets) -> float:
    """Mean per-sample gap between true and predicted absolute error."""
    _, _, e, e_hat, _ = _error_arrays(predictions, targets)
    return float(np.mean(np.abs(e - e_hat)))


def full_report(predictions: Sequence[Prediction], targets,
                stats: NormalizationStats, buckets: int = DEFAULT_BUCKETS,
                mode: str = "by_true_target",
                bucket_max: float | None = DEFAULT_BUCKET_MAX) -> EvalReport:
    """All metrics plus the per-bucket reliability table."""
    bucketed, table = ece_bucketed(predictions, targets, buckets=buckets,
                                   mode=mode, bucket_max=bucket_max)
    return EvalReport(
        mae=mae(predictions, targets),
        mean_gnll=mean_gnll(predictions, targets, stats),
        ece_bucketed=bucketed,
        ece_one=ece_one(predictions, targets),
        ece_pointwise=ece_pointwise(predictions, targets),
        buckets=tuple(table),
        bucketing_mode=mode,
    )


def save_report(report: EvalReport, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(report.to_json_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_report(path: str) -> dict:
    with open(path, "r", encoding="utf-8") as fh:
        return json.load(fh)


def save_bucket_csv(report: EvalReport, path: str) -> None:
    """Reliability table as CSV, one row per bucket."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["index", "lo", "hi", "count", "true_mae", "predicted_mae"])
        for b in report.buckets:
            writer.writerow([b.index, b.lo, b.hi, b.count, b.true_mae, b.predicted_mae])
