"""Synthetic heteroskedastic datasets with known ground truth.

Embeddings are standard-normal float32 vectors; the target for sample i is
drawn from a Gaussian whose mean and standard deviation are known
functions of the embedding:

    mu family     linear              x . w / sqrt(dim)
                  shallow_random_net  tanh(x W1) . w2 / sqrt(width)
    sigma family  constant            fixed value
                  affine_in_mu        max(a + b * mu_years, floor)
                  bucket_step         low below the target offset, high at
                                      or above it

Raw means are mapped to years as target_offset + target_scale * raw, so
defaults put targets around 40 +- 10 years with sigma well above zero, and
negative draws are vanishingly rare (they are clipped at zero to keep
remaining lifespans valid, which matters only for extreme configs).

Ground truth is computed from the float32 embedding matrix exactly as
stored, so a model trained on the emitted files faces precisely the
generating process, and it is written to a separate table the trainer
never reads. Everything is deterministic per seed: generating twice gives
byte-identical files.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .dataset import SampleRecord
from .embeddings import EmbeddingStore
from .rng import philox_generator

MU_FAMILIES = ("linear", "shallow_random_net")
SIGMA_FAMILIES = ("constant", "affine_in_mu", "bucket_step")

# Generator streams, disjoint by construction from the split/init/epoch
# streams (those stay far below 2**32).
_STREAM_EMBED = (1 << 32) + 0
_STREAM_WEIGHTS = (1 << 32) + 1
_STREAM_NOISE = (1 << 32) + 2

_SHALLOW_WIDTH = 32
_PHOTO_DATE = 2000.0
_AGE_AT_PHOTO = 40.0


@dataclass(frozen=True)
class SyntheticConfig:
    n_samples: int = 1000
    input_dim: int = 64
    mu_family: str = "linear"
    sigma_family: str = "affine_in_mu"
    seed: int = 0
    target_offset: float = 40.0
    target_scale: float = 10.0
    sigma_constant: float = 2.0
    sigma_affine_a: float = 1.0
    sigma_affine_b: float = 0.05
    sigma_floor: float = 0.5
    sigma_step_low: float = 1.0
    sigma_step_high: float = 3.0

    def __post_init__(self):
        if self.n_samples < 1 or self.input_dim < 1:
            raise ValueError("n_samples and input_dim must be positive")
        if self.mu_family not in MU_FAMILIES:
            raise ValueError(f"mu_family must be one of {MU_FAMILIES}")
        if self.sigma_family not in SIGMA_FAMILIES:
            raise ValueError(f"sigma_family must be one of {SIGMA_FAMILIES}")
        if not self.target_scale > 0.0:
            raise ValueError("target_scale must be positive")
        if self.sigma_family == "constant" and not self.sigma_constant > 0.0:
            raise ValueError("sigma_constant must be positive")
        if self.sigma_family == "affine_in_mu" and not self.sigma_floor > 0.0:
            raise ValueError("sigma_floor must be positive")
        if self.sigma_family == "bucket_step" and not (
                self.sigma_step_low > 0.0 and self.sigma_step_high > 0.0):
            raise ValueError("bucket_step sigmas must be positive")


@dataclass(frozen=True)
class GroundTruth:
    """True (mu, sigma) in years per generated sample, aligned with ids."""

    ids: tuple[str, ...]
    mu: np.ndarray
    sigma: np.ndarray


def _true_mu_years(config: SyntheticConfig, x: np.ndarray) -> np.ndarray:
    rng = philox_generator(config.seed, stream=_STREAM_WEIGHTS)
    if config.mu_family == "linear":
        w = rng.standard_normal(config.input_dim)
        raw = x @ w / np.sqrt(config.input_dim)
    else:
        w1 = rng.standard_normal((config.input_dim, _SHALLOW_WIDTH))
        w2 = rng.standard_normal(_SHALLOW_WIDTH)
        h = np.tanh(x @ w1 / np.sqrt(config.input_dim))
        raw = h @ w2 / np.sqrt(_SHALLOW_WIDTH)
    return config.target_offset + config.target_scale * raw


def _true_sigma_years(config: SyntheticConfig, mu_years: np.ndarray) -> np.ndarray:
    if config.sigma_family == "constant":
        return np.full(mu_years.shape, config.sigma_constant)
    if config.sigma_family == "affine_in_mu":
        return np.maximum(config.sigma_affine_a + config.sigma_affine_b * mu_years,
                          config.sigma_floor)
    return np.where(mu_years < config.target_offset,
                    config.sigma_step_low, config.sigma_step_high)


def generate(config: SyntheticConfig,
             ) -> tuple[EmbeddingStore, list[SampleRecord], GroundTruth]:
    """Deterministic dataset triple (embeddings, manifest records, truth)."""
    n, dim = config.n_samples, config.input_dim
    width = len(str(n))
    ids = tuple(f"synth-{i:0{width}d}" for i in range(n))

    x64 = philox_generator(config.seed, stream=_STREAM_EMBED).standard_normal((n, dim))
    store = EmbeddingStore(ids=list(ids), data=x64.astype(np.float32))
    x = store.data.astype(np.float64)  # truth follows the stored float32 values

    mu = _true_mu_years(config, x)
    sigma = _true_sigma_years(config, mu)
    z = philox_generator(config.seed, stream=_STREAM_NOISE).standard_normal(n)
    y = np.maximum(mu + sigma * z, 0.0)

    records = [
        SampleRecord(
            id=ids[i],
            image_path=f"synthetic://{ids[i]}",
            birth_date=_PHOTO_DATE - _AGE_AT_PHOTO,
            photo_date=_PHOTO_DATE,
            death_date=_PHOTO_DATE + float(y[i]),
            dataset_tag="faces",
        )
        for i in range(n)
    ]
    return store, records, GroundTruth(ids=ids, mu=mu, sigma=sigma)


def save_ground_truth(truth: GroundTruth, path: str) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["id", "mu", "sigma"])
        for i, sample_id in enumerate(truth.ids):
            writer.writerow([sample_id, repr(float(truth.mu[i])),
                             repr(float(truth.sigma[i]))])


def load_ground_truth(path: str) -> GroundTruth:
    ids, mu, sigma = [], [], []
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not {"id", "mu", "sigma"} <= set(reader.fieldnames):
            raise ValueError(f"{path}: expected CSV columns id, mu, sigma")
        for row in reader:
            ids.append(row["id"])
            mu.append(float(row["mu"]))
            sigma.append(float(row["sigma"]))
    return GroundTruth(ids=tuple(ids), mu=np.array(mu), sigma=np.array(sigma))


def truth_by_id(truth: GroundTruth) -> dict[str, tuple[float, float]]:
    """id -> (mu, sigma) lookup."""
    return {sample_id: (float(truth.mu[i]), float(truth.sigma[i]))
            for i, sample_id in enumerate(truth.ids)}
