"""Uncertainty-aware remaining-lifespan prediction over image embeddings.

The package trains a small mean-variance head on precomputed embeddings,
scores it with calibration-aware metrics, and ships the supporting cast:
deterministic splits, an EMB1 embedding container, a life-table baseline,
a curation pipeline, and a synthetic data generator with known truth.
"""

from .dataset import (
    DatasetSplit,
    ManifestError,
    NormalizationStats,
    SampleRecord,
    fit_normalization,
    load_manifest,
    save_manifest,
    split_dataset,
)
from .embeddings import EmbeddingFormatError, EmbeddingStore, read_embeddings, write_embeddings
from .head import (
    MveHeadParams,
    Prediction,
    forward,
    init_params,
    load_checkpoint,
    loss_and_gradients,
    predict_batch,
    save_checkpoint,
)
from .metrics import (
    EvalReport,
    ece_bucketed,
    ece_one,
    ece_pointwise,
    expected_abs_error,
    full_report,
    mae,
)
from .training import TrainConfig, TrainReport, evaluate_during_training, train

__version__ = "0.1.0"

__all__ = [
    "DatasetSplit",
    "EmbeddingFormatError",
    "EmbeddingStore",
    "EvalReport",
    "ManifestError",
    "MveHeadParams",
    "NormalizationStats",
    "Prediction",
    "SampleRecord",
    "TrainConfig",
    "TrainReport",
    "ece_bucketed",
    "ece_one",
    "ece_pointwise",
    "evaluate_during_training",
    "expected_abs_error",
    "fit_normalization",
    "forward",
    "full_report",
    "init_params",
    "load_checkpoint",
    "load_manifest",
    "loss_and_gradients",
    "mae",
    "predict_batch",
    "read_embeddings",
    "save_checkpoint",
    "save_manifest",
    "split_dataset",
    "train",
    "write_embeddings",
]
