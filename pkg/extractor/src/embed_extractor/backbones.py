"""Backbone registry and loaders.

A backbone here is anything with a ``name``, a ``dim`` (its classification
token width) and an ``embed(batch) -> rows`` method mapping a float32
``(B, 3, H, W)`` batch of preprocessed images to a float32 ``(B, dim)``
matrix. Every embedding row must equal the token width; ``embed`` checks
this invariant on each call.

Two families are registered, both selected purely by the config string:

``dinov2_*_reg``
    The DINOv2 vision transformers with register tokens, loaded through
    torch.hub in inference mode. The giant variant is the reference
    backbone with a 1536-wide classification token. Requires the optional
    ``torch`` dependency and downloadable weights.

``fixed-projection-<dim>``
    A weightless stand-in for tests and pipeline dry runs: it average-pools
    the normalized image onto a 16x16 grid and pushes the 768 pooled values
    through a frozen Gaussian projection and a tanh. Each row depends only
    on its own image content, never on batch neighbors, so output is
    bitwise reproducible across runs and batch sizes. It is not a learned
    representation and carries no semantic meaning.
"""

from __future__ import annotations

import numpy as np

REFERENCE_BACKBONE = "dinov2_vitg14_reg"

DINOV2_HUB_REPO = "facebookresearch/dinov2"
DINOV2_WIDTHS = {
    "dinov2_vits14_reg": 384,
    "dinov2_vitb14_reg": 768,
    "dinov2_vitl14_reg": 1024,
    "dinov2_vitg14_reg": 1536,
}

STUB_PREFIX = "fixed-projection-"
POOL_GRID = 16
PROJECTION_SEED = 1536  # fixed Philox key for the frozen projection


def token_width(backbone: str) -> int:
    """Classification-token width for a backbone name, without loading it."""
    if backbone in DINOV2_WIDTHS:
        return DINOV2_WIDTHS[backbone]
    if backbone.startswith(STUB_PREFIX):
        tail = backbone[len(STUB_PREFIX):]
        if not tail.isdigit() or int(tail) < 1:
            raise ValueError(
                f"bad stub backbone {backbone!r}: expected {STUB_PREFIX}<positive dim>")
        return int(tail)
    raise ValueError(
        f"unknown backbone {backbone!r}: expected one of {sorted(DINOV2_WIDTHS)} "
        f"or {STUB_PREFIX}<dim>")


def load_backbone(backbone: str, device: str = "cpu"):
    """Instantiate a backbone by its config string."""
    dim = token_width(backbone)
    if backbone.startswith(STUB_PREFIX):
        return FixedProjectionBackbone(dim)
    return DinoV2Backbone(backbone, device)


def _check_batch(batch: np.ndarray) -> None:
    if batch.ndim != 4 or batch.shape[1] != 3:
        raise ValueError(f"batch must have shape (B, 3, H, W), got {batch.shape}")


class FixedProjectionBackbone:
    """Deterministic weightless backbone; see the module docstring."""

    def __init__(self, dim: int):
        if dim < 1:
            raise ValueError("dim must be positive")
        self.name = f"{STUB_PREFIX}{dim}"
        self.dim = dim
        gen = np.random.Generator(np.random.Philox(key=PROJECTION_SEED))
        n_features = 3 * POOL_GRID * POOL_GRID
        self._projection = gen.standard_normal((dim, n_features)) / np.sqrt(n_features)

    def embed(self, batch: np.ndarray) -> np.ndarray:
        batch = np.asarray(batch, dtype=np.float64)
        _check_batch(batch)
        _, _, h, w = batch.shape
        if h < POOL_GRID or w < POOL_GRID:
            raise ValueError(f"images must be at least {POOL_GRID}x{POOL_GRID}, got {h}x{w}")
        rows = np.arange(POOL_GRID + 1) * h // POOL_GRID
        cols = np.arange(POOL_GRID + 1) * w // POOL_GRID
        pooled = np.add.reduceat(np.add.reduceat(batch, rows[:-1], axis=2), cols[:-1], axis=3)
        counts = np.diff(rows)[:, None] * np.diff(cols)[None, :]
        feats = (pooled / counts).reshape(batch.shape[0], -1)
        # One matrix-vector product per image keeps each row independent of
        # batch composition, so identical images embed bitwise-identically
        # no matter how they are batched.
        out = np.empty((batch.shape[0], self.dim), dtype=np.float64)
        for i in range(batch.shape[0]):
            out[i] = self._projection @ feats[i]
        result = np.tanh(out).astype(np.float32)
        assert result.shape[1] == self.dim
        return result


class DinoV2Backbone:
    """DINOv2 with register tokens via torch.hub, run in inference mode.

    The forward pass returns the normalized classification token. The model
    is put in eval mode and wrapped in ``torch.inference_mode`` so repeated
    runs over the same batches are deterministic on CPU.
    """

    def __init__(self, name: str, device: str = "cpu"):
        if name not in DINOV2_WIDTHS:
            raise ValueError(f"unknown DINOv2 variant {name!r}")
        try:
            import torch
        except ImportError as exc:
            raise RuntimeError(
                f"backbone {name!r} needs the optional torch dependency "
                f"(pip install embed-extractor[torch])") from exc
        self.name = name
        self.dim = DINOV2_WIDTHS[name]
        self._torch = torch
        self._device = device
        self._model = torch.hub.load(DINOV2_HUB_REPO, name).eval().to(device)

    def embed(self, batch: np.ndarray) -> np.ndarray:
        batch = np.ascontiguousarray(batch, dtype=np.float32)
        _check_batch(batch)
        x = self._torch.from_numpy(batch).to(self._device)
        with self._torch.inference_mode():
            out = self._model(x)
        rows = out.detach().cpu().numpy().astype(np.float32, copy=False)
        if rows.ndim != 2 or rows.shape[1] != self.dim:
            raise RuntimeError(
                f"{self.name} returned shape {rows.shape}, expected (B, {self.dim})")
        return rows
