"""Deterministic mini-batch training for the mean-variance head.

Three schedules:

    l1_only    L1 loss on the whole training set. The log-variance output
               layer receives zero gradient throughout, so its parameters
               stay exactly at their initialized values.
    gnll_only  Gaussian NLL on the whole training set (the default).
    two_phase  L1 on one part of the training set, then GNLL on the
               held-out remainder. The second phase sees data the mean
               head was not fitted on, which keeps the variance estimate
               honest about actual residuals.

Determinism contract: given identical (store, split, stats, targets,
config), two runs produce bitwise-identical parameters. All shuffling and
initialization is keyed by the config seed through named counter-based
generator streams; batches are visited in permutation order and the
optimizer is plain elementwise arithmetic over one flat parameter vector.

If a batch update produces a non-finite loss or parameter, training stops
and the parameters are rolled back to the snapshot taken at the end of the
last fully finite epoch (or to initialization). The report is flagged
``diverged`` instead of raising, so callers keep the best available model.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, asdict
from typing import Mapping, Sequence

import numpy as np

from .dataset import DatasetSplit, NormalizationStats, split_ids
from .embeddings import EmbeddingStore
from .head import MveHeadParams, batch_losses, init_params, loss_and_gradients
from .rng import STREAM_EPOCH_BASE, philox_permutation

SCHEDULES = ("l1_only", "gnll_only", "two_phase")
OPTIMIZERS = ("sgd", "adam_like")


@dataclass(frozen=True)
class TrainConfig:
    schedule: str = "gnll_only"
    epochs_phase1: int = 50
    epochs_phase2: int = 50
    batch_size: int = 64
    learning_rate: float = 1e-3
    optimizer: str = "adam_like"
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 1
    holdout_fraction_phase2: float = 0.5
    hidden_dim: int = 256

    def __post_init__(self):
        if self.schedule not in SCHEDULES:
            raise ValueError(f"schedule must be one of {SCHEDULES}, got {self.schedule!r}")
        if self.optimizer not in OPTIMIZERS:
            raise ValueError(f"optimizer must be one of {OPTIMIZERS}, got {self.optimizer!r}")
        if self.schedule in ("l1_only", "two_phase") and self.epochs_phase1 < 1:
            raise ValueError("epochs_phase1 must be positive for schedules with an L1 phase")
        if self.schedule in ("gnll_only", "two_phase") and self.epochs_phase2 < 1:
            raise ValueError("epochs_phase2 must be positive for schedules with a GNLL phase")
        if self.batch_size < 1:
            raise ValueError("batch_size must be positive")
        if not self.learning_rate > 0.0:
            raise ValueError("learning_rate must be positive")
        if not 0.0 <= self.holdout_fraction_phase2 < 1.0:
            raise ValueError("holdout_fraction_phase2 must be in [0, 1)")
        if self.schedule == "two_phase" and self.holdout_fraction_phase2 <= 0.0:
            raise ValueError("two_phase needs holdout_fraction_phase2 > 0 for its GNLL phase")
        if self.hidden_dim < 1:
            raise ValueError("hidden_dim must be positive")

    def to_json_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json_dict(cls, obj: Mapping) -> "TrainConfig":
        known = {f: obj[f] for f in cls.__dataclass_fields__ if f in obj}
        unknown = set(obj) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown train config keys: {sorted(unknown)}")
        return cls(**known)

    def config_hash(self) -> str:
        blob = json.dumps(self.to_json_dict(), sort_keys=True).encode("utf-8")
        return hashlib.sha256(blob).hexdigest()


@dataclass(frozen=True)
class EpochStats:
    """End-of-epoch evaluation; losses are in the phase's own loss mode.

    test_loss is None when the split has no test ids.
    """

    epoch: int
    phase: str
    train_loss: float
    test_loss: float | None


@dataclass
class TrainReport:
    epochs: list[EpochStats] = field(default_factory=list)
    diverged: bool = False
    checkpoint_path: str | None = None


def evaluate_during_training(params: MveHeadParams, store: EmbeddingStore,
                             ids: Sequence[str], targets_years: Sequence[float],
                             stats: NormalizationStats) -> tuple[float, float]:
    """(l1 in years, gnll in normalized units) for the given samples.

    The gnll value is computed by the same code path as the training loss,
    so logging it mid-run and comparing against loss_and_gradients always
    agrees exactly.
    """
    ids = list(ids)
    if not ids:
        raise ValueError("no ids to evaluate")
    x = store.rows(ids)
    y_norm = stats.normalize(np.asarray(targets_years, dtype=np.float64))
    l1_norm, gnll = batch_losses(params, x, y_norm)
    return l1_norm * stats.target_std, gnll


def _gather_targets(targets: Mapping[str, float], ids: Sequence[str]) -> np.ndarray:
    try:
        return np.array([targets[i] for i in ids], dtype=np.float64)
    except KeyError as exc:
        raise KeyError(f"no target for sample id {exc.args[0]!r}") from None


class _Optimizer:
    """SGD or Adam-style updates applied in place to one flat vector."""

    def __init__(self, config: TrainConfig, n_params: int):
        self.config = config
        if config.optimizer == "adam_like":
            self.m = np.zeros(n_params)
            self.v = np.zeros(n_params)
            self.t = 0

    def step(self, theta: np.ndarray, grad: np.ndarray) -> None:
        cfg = self.config
        if cfg.optimizer == "sgd":
            theta -= cfg.learning_rate * grad
            return
        self.t += 1
        b1, b2 = cfg.adam_beta1, cfg.adam_beta2
        self.m = b1 * self.m + (1.0 - b1) * grad
        self.v = b2 * self.v + (1.0 - b2) * grad * grad
        m_hat = self.m / (1.0 - b1 ** self.t)
        v_hat = self.v / (1.0 - b2 ** self.t)
        theta -= cfg.learning_rate * m_hat / (np.sqrt(v_hat) + cfg.adam_eps)


def _phase_plan(split: DatasetSplit, config: TrainConfig) -> list[tuple[str, list[str], int]]:
    """(loss_mode, subset ids, epochs) for each phase of the schedule."""
    train_ids = list(split.train_ids)
    if config.schedule == "l1_only":
        return [("l1", train_ids, config.epochs_phase1)]
    if config.schedule == "gnll_only":
        return [("gnll", train_ids, config.epochs_phase2)]
    fit_ids, holdout_ids = split_ids(train_ids, config.seed,
                                     1.0 - config.holdout_fraction_phase2)
    if not fit_ids or not holdout_ids:
        raise ValueError("two_phase holdout left an empty phase subset")
    return [("l1", fit_ids, config.epochs_phase1),
            ("gnll", holdout_ids, config.epochs_phase2)]


def train(store: EmbeddingStore, split: DatasetSplit, stats: NormalizationStats,
          targets: Mapping[str, float], config: TrainConfig,
          ) -> tuple[MveHeadParams, TrainReport]:
    """Train a fresh head on the split's training ids.

    ``targets`` maps sample id to remaining lifespan in years; entries must
    cover every train and test id. Test ids are only ever used for the
    per-epoch evaluation column, never for gradients.
    """
    if not split.train_ids:
        raise ValueError("split has no training ids")

    base = init_params(store.dim, hidden_dim=config.hidden_dim, seed=config.seed)
    theta = base.to_vector()
    params = base.with_vector(theta)  # tensors are views into theta

    test_ids = list(split.test_ids)
    x_test = store.rows(test_ids) if test_ids else None
    y_test = stats.normalize(_gather_targets(targets, test_ids)) if test_ids else None

    report = TrainReport()
    snapshot = theta.copy()
    global_epoch = 0

    for loss_mode, phase_ids, phase_epochs in _phase_plan(split, config):
        x_phase = store.rows(phase_ids)
        y_phase = stats.normalize(_gather_targets(targets, phase_ids))
        n = len(phase_ids)
        optimizer = _Optimizer(config, theta.size)

        for _ in range(phase_epochs):
            order = np.asarray(philox_permutation(
                n, config.seed, stream=STREAM_EPOCH_BASE + global_epoch))
            for start in range(0, n, config.batch_size):
                batch = order[start : start + config.batch_size]
                try:
                    # Overflow to inf here is the handled divergence signal,
                    # not a bug, so keep numpy quiet about it.
                    with np.errstate(over="ignore", invalid="ignore"):
                        loss, grads = loss_and_gradients(
                            params, x_phase[batch], y_phase[batch], loss_mode)
                except FloatingPointError:
                    loss = float("nan")
                if not np.isfinite(loss):
                    report.diverged = True
                    break
                optimizer.step(theta, grads.to_vector())
                if not np.all(np.isfinite(theta)):
                    report.diverged = True
                    break
            if report.diverged:
                break

            train_loss = _loss_in_mode(params, x_phase, y_phase, loss_mode)
            if x_test is not None:
                test_loss = _loss_in_mode(params, x_test, y_test, loss_mode)
            else:
                test_loss = None
            report.epochs.append(EpochStats(
                epoch=global_epoch, phase=loss_mode,
                train_loss=train_loss, test_loss=test_loss))
            snapshot = theta.copy()
            global_epoch += 1
        if report.diverged:
            break

    if report.diverged:
        theta[:] = snapshot
    final = params.copy()
    return final, report


def _loss_in_mode(params, x, y_norm, loss_mode: str) -> float:
    l1, gnll = batch_losses(params, x, y_norm)
    return l1 if loss_mode == "l1" else gnll


def write_training_log(report: TrainReport, path: str) -> None:
    """One JSON object per epoch, in order."""
    with open(path, "w", encoding="utf-8") as fh:
        for entry in report.epochs:
            fh.write(json.dumps({
                "epoch": entry.epoch,
                "phase": entry.phase,
                "train_loss": entry.train_loss,
                "test_loss": entry.test_loss,
            }, sort_keys=True))
            fh.write("\n")
