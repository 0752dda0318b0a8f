"""Mean-variance regression head: a small MLP with two output layers.

The head consumes one embedding vector and predicts both the mean and the
log variance of a Gaussian over the normalized target. Two dense tanh
layers are shared by both outputs, so every trunk weight influences the
mean and the uncertainty estimate alike. Training happens entirely in
normalized target units; denormalization to years is applied only when
building a :class:`Prediction`.

Losses (normalized units, analytic gradients):

    gnll  mean over the batch of 0.5 * (log var_i + (y_i - mu_i)^2 / var_i)
    l1    mean over the batch of |y_i - mu_i|, with exactly zero gradient
          into the log-variance output layer

The predicted log variance is clamped to ``logvar_clamp`` before
exponentiation, which keeps sigma strictly positive and bounded and guards
against the usual variance collapse/explosion failure modes of this loss.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass

import numpy as np

from .dataset import NormalizationStats
from .embeddings import EmbeddingStore
from .rng import STREAM_INIT, philox_generator

GAUSS_ABS_ERROR_FACTOR = math.sqrt(2.0 / math.pi)

DEFAULT_HIDDEN_DIM = 256
DEFAULT_LOGVAR_CLAMP = (-10.0, 10.0)

LOSS_MODES = ("l1", "gnll")

CHECKPOINT_MAGIC = b"MVE1"
CHECKPOINT_VERSION = 1

_TENSOR_NAMES = ("w1", "b1", "w2", "b2", "w_mu", "b_mu", "w_logvar", "b_logvar")


class CheckpointError(Exception):
    """A checkpoint file or its sidecar is corrupt or inconsistent."""


@dataclass
class MveHeadParams:
    """Parameters of the two-layer shared trunk and the two output heads.

    Shapes: w1 (input_dim, hidden), w2 (hidden, hidden), head weights
    (hidden,), head biases (1,). All arrays are float64 in memory;
    checkpoints store float32.
    """

    input_dim: int
    hidden_dim: int
    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray
    w_mu: np.ndarray
    b_mu: np.ndarray
    w_logvar: np.ndarray
    b_logvar: np.ndarray
    logvar_clamp: tuple[float, float] = DEFAULT_LOGVAR_CLAMP

    def tensors(self) -> dict[str, np.ndarray]:
        return {name: getattr(self, name) for name in _TENSOR_NAMES}

    def to_vector(self) -> np.ndarray:
        """All parameters flattened into one float64 vector (fixed order)."""
        return np.concatenate([t.ravel() for t in self.tensors().values()])

    def num_params(self) -> int:
        return sum(t.size for t in self.tensors().values())

    def copy(self) -> "MveHeadParams":
        return MveHeadParams(
            input_dim=self.input_dim,
            hidden_dim=self.hidden_dim,
            logvar_clamp=self.logvar_clamp,
            **{name: t.copy() for name, t in self.tensors().items()},
        )

    def with_vector(self, vec: np.ndarray) -> "MveHeadParams":
        """New params whose tensors are views into ``vec`` (fixed order)."""
        if vec.shape != (self.num_params(),):
            raise ValueError("parameter vector has wrong length")
        out = {}
        offset = 0
        for name, t in self.tensors().items():
            out[name] = vec[offset : offset + t.size].reshape(t.shape)
            offset += t.size
        return MveHeadParams(
            input_dim=self.input_dim,
            hidden_dim=self.hidden_dim,
            logvar_clamp=self.logvar_clamp,
            **out,
        )

    def all_finite(self) -> bool:
        return all(np.all(np.isfinite(t)) for t in self.tensors().values())


@dataclass
class HeadGradients:
    """Loss gradients, one array per parameter tensor (same shapes)."""

    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray
    w_mu: np.ndarray
    b_mu: np.ndarray
    w_logvar: np.ndarray
    b_logvar: np.ndarray

    def to_vector(self) -> np.ndarray:
        return np.concatenate([getattr(self, name).ravel() for name in _TENSOR_NAMES])


@dataclass(frozen=True)
class Prediction:
    """Denormalized model output for one sample, all values in years."""

    mu: float
    sigma: float
    expected_abs_error: float

    def __post_init__(self):
        if not (math.isfinite(self.sigma) and self.sigma > 0.0):
            raise ValueError(f"sigma must be positive and finite, got {self.sigma}")
        consistent = GAUSS_ABS_ERROR_FACTOR * self.sigma
        if abs(self.expected_abs_error - consistent) > 1e-9 * max(1.0, abs(consistent)):
            raise ValueError("expected_abs_error inconsistent with sigma")

    @classmethod
    def from_mu_sigma(cls, mu: float, sigma: float) -> "Prediction":
        return cls(mu=float(mu), sigma=float(sigma),
                   expected_abs_error=GAUSS_ABS_ERROR_FACTOR * float(sigma))


def init_params(input_dim: int, hidden_dim: int = DEFAULT_HIDDEN_DIM, seed: int = 0,
                logvar_clamp: tuple[float, float] = DEFAULT_LOGVAR_CLAMP) -> MveHeadParams:
    """Deterministic initialization keyed by ``seed``.

    Trunk and mean-head weights are standard normal scaled by 1/sqrt(fan_in);
    all biases start at zero. The log-variance head starts at exactly zero
    (weights and bias), so the initial sigma is 1 in normalized units for
    every input.
    """
    if input_dim < 1 or hidden_dim < 1:
        raise ValueError("input_dim and hidden_dim must be positive")
    lo, hi = logvar_clamp
    if not lo < hi:
        raise ValueError("logvar_clamp must be an increasing (lo, hi) pair")
    rng = philox_generator(seed, stream=STREAM_INIT)
    return MveHeadParams(
        input_dim=input_dim,
        hidden_dim=hidden_dim,
        w1=rng.standard_normal((input_dim, hidden_dim)) / math.sqrt(input_dim),
        b1=np.zeros(hidden_dim),
        w2=rng.standard_normal((hidden_dim, hidden_dim)) / math.sqrt(hidden_dim),
        b2=np.zeros(hidden_dim),
        w_mu=rng.standard_normal(hidden_dim) / math.sqrt(hidden_dim),
        b_mu=np.zeros(1),
        w_logvar=np.zeros(hidden_dim),
        b_logvar=np.zeros(1),
        logvar_clamp=(float(lo), float(hi)),
    )


def _forward_raw(params: MveHeadParams, x: np.ndarray):
    """Shared forward pass; returns activations needed for backprop."""
    h1 = np.tanh(x @ params.w1 + params.b1)
    h2 = np.tanh(h1 @ params.w2 + params.b2)
    mu = h2 @ params.w_mu + params.b_mu[0]
    logvar_raw = h2 @ params.w_logvar + params.b_logvar[0]
    lo, hi = params.logvar_clamp
    logvar = np.clip(logvar_raw, lo, hi)
    return h1, h2, mu, logvar_raw, logvar


def _as_batch(params: MveHeadParams, embeddings: np.ndarray) -> np.ndarray:
    x = np.asarray(embeddings, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != params.input_dim:
        raise ValueError(
            f"embedding width {x.shape[-1] if x.ndim else 'scalar'} does not match "
            f"input_dim {params.input_dim}"
        )
    if not np.all(np.isfinite(x)):
        raise ValueError("non-finite embedding values")
    return x


def forward(params: MveHeadParams, embedding: np.ndarray,
            stats: NormalizationStats) -> Prediction:
    """Predict mean and uncertainty in years for one embedding."""
    x = _as_batch(params, embedding)
    if x.shape[0] != 1:
        raise ValueError("forward takes a single embedding; use predict_batch")
    _, _, mu_norm, _, logvar = _forward_raw(params, x)
    mu_years = float(mu_norm[0]) * stats.target_std + stats.target_mean
    sigma_years = math.exp(float(logvar[0]) / 2.0) * stats.target_std
    return Prediction.from_mu_sigma(mu_years, sigma_years)


def predict_batch(params: MveHeadParams, store: EmbeddingStore, ids,
                  stats: NormalizationStats) -> list[Prediction]:
    """Order-preserving batch prediction for ids present in the store."""
    ids = list(ids)
    if not ids:
        return []
    x = _as_batch(params, store.rows(ids))
    _, _, mu_norm, _, logvar = _forward_raw(params, x)
    mu_years = mu_norm * stats.target_std + stats.target_mean
    sigma_years = np.exp(logvar / 2.0) * stats.target_std
    return [Prediction.from_mu_sigma(m, s) for m, s in zip(mu_years, sigma_years)]


def loss_and_gradients(params: MveHeadParams, embeddings: np.ndarray,
                       targets: np.ndarray, loss_mode: str) -> tuple[float, HeadGradients]:
    """Batch loss and exact analytic gradients in normalized target units.

    In l1 mode the log-variance output layer receives an exactly zero
    gradient; the trunk is trained through the mean head only.
    """
    if loss_mode not in LOSS_MODES:
        raise ValueError(f"loss_mode must be one of {LOSS_MODES}, got {loss_mode!r}")
    x = _as_batch(params, embeddings)
    y = np.asarray(targets, dtype=np.float64).ravel()
    n = x.shape[0]
    if n == 0:
        raise ValueError("empty batch")
    if y.shape != (n,):
        raise ValueError("targets length does not match batch size")

    h1, h2, mu, logvar_raw, logvar = _forward_raw(params, x)
    if not (np.all(np.isfinite(mu)) and np.all(np.isfinite(logvar))):
        raise FloatingPointError("non-finite forward values")
    residual = y - mu

    if loss_mode == "gnll":
        var = np.exp(logvar)
        loss = float(0.5 * np.mean(logvar + residual * residual / var))
        dmu = (mu - y) / var / n
        dlogvar = 0.5 * (1.0 - residual * residual / var) / n
        lo, hi = params.logvar_clamp
        dlogvar = np.where((logvar_raw > lo) & (logvar_raw < hi), dlogvar, 0.0)
    else:
        loss = float(np.mean(np.abs(residual)))
        dmu = -np.sign(residual) / n
        dlogvar = np.zeros(n)

    # Backprop through the two heads into the shared trunk.
    g_w_mu = h2.T @ dmu
    g_b_mu = np.array([dmu.sum()])
    g_w_logvar = h2.T @ dlogvar
    g_b_logvar = np.array([dlogvar.sum()])

    dh2 = np.outer(dmu, params.w_mu) + np.outer(dlogvar, params.w_logvar)
    da2 = dh2 * (1.0 - h2 * h2)
    g_w2 = h1.T @ da2
    g_b2 = da2.sum(axis=0)

    dh1 = da2 @ params.w2.T
    da1 = dh1 * (1.0 - h1 * h1)
    g_w1 = x.T @ da1
    g_b1 = da1.sum(axis=0)

    grads = HeadGradients(
        w1=g_w1, b1=g_b1, w2=g_w2, b2=g_b2,
        w_mu=g_w_mu, b_mu=g_b_mu, w_logvar=g_w_logvar, b_logvar=g_b_logvar,
    )
    return loss, grads


def batch_losses(params: MveHeadParams, embeddings: np.ndarray,
                 targets: np.ndarray) -> tuple[float, float]:
    """(l1, gnll) losses of a batch in normalized units, forward only.

    The gnll value is computed with the same expression as
    :func:`loss_and_gradients`, so the two agree bit for bit.
    """
    x = _as_batch(params, embeddings)
    y = np.asarray(targets, dtype=np.float64).ravel()
    if x.shape[0] == 0:
        raise ValueError("empty batch")
    _, _, mu, _, logvar = _forward_raw(params, x)
    residual = y - mu
    var = np.exp(logvar)
    l1 = float(np.mean(np.abs(residual)))
    gnll = float(0.5 * np.mean(logvar + residual * residual / var))
    return l1, gnll


def save_checkpoint(params: MveHeadParams, stats: NormalizationStats, path: str,
                    train_config_hash: str | None = None) -> None:
    """Write an MVE1 checkpoint plus its JSON sidecar at ``path + '.json'``.

    Tensors are stored as little-endian float32 with a shape table; the
    sidecar records normalization stats, architecture, clamp range and an
    optional hash of the training configuration.
    """
    parts = [CHECKPOINT_MAGIC, struct.pack("<II", CHECKPOINT_VERSION, len(_TENSOR_NAMES))]
    for name, tensor in params.tensors().items():
        raw = name.encode("ascii")
        parts.append(struct.pack("<H", len(raw)))
        parts.append(raw)
        parts.append(struct.pack("<B", tensor.ndim))
        parts.append(struct.pack(f"<{tensor.ndim}I", *tensor.shape))
        parts.append(tensor.astype("<f4").tobytes(order="C"))
    with open(path, "wb") as fh:
        fh.write(b"".join(parts))

    sidecar = {
        "format": "mve1-sidecar",
        "version": CHECKPOINT_VERSION,
        "input_dim": params.input_dim,
        "hidden_dim": params.hidden_dim,
        "activation": "tanh",
        "logvar_clamp": list(params.logvar_clamp),
        "target_mean": stats.target_mean,
        "target_std": stats.target_std,
        "train_config_hash": train_config_hash,
    }
    with open(path + ".json", "w", encoding="utf-8") as fh:
        json.dump(sidecar, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_checkpoint(path: str) -> tuple[MveHeadParams, NormalizationStats, dict]:
    """Read an MVE1 checkpoint and its sidecar; tensors come back as float64."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path}: bad magic {blob[:4]!r}")
    version, n_tensors = struct.unpack_from("<II", blob, 4)
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: unsupported version {version}")

    offset = 12
    tensors: dict[str, np.ndarray] = {}
    try:
        for _ in range(n_tensors):
            (name_len,) = struct.unpack_from("<H", blob, offset)
            offset += 2
            name = blob[offset : offset + name_len].decode("ascii")
            offset += name_len
            (ndim,) = struct.unpack_from("<B", blob, offset)
            offset += 1
            shape = struct.unpack_from(f"<{ndim}I", blob, offset)
            offset += 4 * ndim
            count = int(np.prod(shape, dtype=np.int64)) if ndim else 1
            tensors[name] = (
                np.frombuffer(blob, dtype="<f4", count=count, offset=offset)
                .reshape(shape)
                .astype(np.float64)
            )
            offset += 4 * count
    except (struct.error, ValueError) as exc:
        raise CheckpointError(f"{path}: truncated or corrupt tensor table") from exc
    missing = [n for n in _TENSOR_NAMES if n not in tensors]
    if missing:
        raise CheckpointError(f"{path}: missing tensors {missing}")

    try:
        with open(path + ".json", "r", encoding="utf-8") as fh:
            sidecar = json.load(fh)
    except FileNotFoundError as exc:
        raise CheckpointError(f"{path}.json: missing normalization sidecar") from exc

    params = MveHeadParams(
        input_dim=int(sidecar["input_dim"]),
        hidden_dim=int(sidecar["hidden_dim"]),
        logvar_clamp=tuple(float(v) for v in sidecar["logvar_clamp"]),
        **{name: tensors[name] for name in _TENSOR_NAMES},
    )
    if params.w1.shape != (params.input_dim, params.hidden_dim):
        raise CheckpointError(f"{path}: tensor shapes disagree with sidecar dims")
    stats = NormalizationStats(
        target_mean=float(sidecar["target_mean"]),
        target_std=float(sidecar["target_std"]),
    )
    return params, stats, sidecar
