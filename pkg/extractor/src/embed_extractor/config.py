"""Extraction configuration.

``ExtractorConfig`` pins everything that shapes the emitted embeddings:
which backbone to run, the square resolution used for face crops versus
whole images, the per-channel normalization constants the backbone was
pretrained with, the device, and the batch size. Two runs with the same
config over the same manifest produce bitwise-identical output files.

The default normalization constants are the ImageNet statistics the
DINOv2 family publishes for its own preprocessing.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Mapping

from .backbones import REFERENCE_BACKBONE

IMAGENET_MEAN = (0.485, 0.456, 0.406)
IMAGENET_STD = (0.229, 0.224, 0.225)

FACE_SIZE_DEFAULT = 224
WHOLE_SIZE_DEFAULT = 1022


@dataclass(frozen=True)
class ExtractorConfig:
    backbone: str = REFERENCE_BACKBONE
    face_size: int = FACE_SIZE_DEFAULT
    whole_size: int = WHOLE_SIZE_DEFAULT
    normalization_mean: tuple = IMAGENET_MEAN
    normalization_std: tuple = IMAGENET_STD
    device: str = "cpu"
    batch_size: int = 16

    def __post_init__(self):
        object.__setattr__(self, "normalization_mean",
                           tuple(float(v) for v in self.normalization_mean))
        object.__setattr__(self, "normalization_std",
                           tuple(float(v) for v in self.normalization_std))
        if not self.backbone or not isinstance(self.backbone, str):
            raise ValueError("backbone must be a non-empty string")
        if self.face_size < 1:
            raise ValueError("face_size must be positive")
        if self.whole_size < 1:
            raise ValueError("whole_size must be positive")
        for name, triple in (("normalization_mean", self.normalization_mean),
                             ("normalization_std", self.normalization_std)):
            if len(triple) != 3:
                raise ValueError(f"{name} must have one value per RGB channel")
            if not all(v == v and abs(v) != float("inf") for v in triple):
                raise ValueError(f"{name} must be finite")
        if any(v <= 0.0 for v in self.normalization_std):
            raise ValueError("normalization_std values must be positive")
        if not self.device or not isinstance(self.device, str):
            raise ValueError("device must be a non-empty string")
        if self.batch_size < 1:
            raise ValueError("batch_size must be positive")

    def to_json_dict(self) -> dict:
        out = asdict(self)
        out["normalization_mean"] = list(self.normalization_mean)
        out["normalization_std"] = list(self.normalization_std)
        return out

    @classmethod
    def from_json_dict(cls, obj: Mapping) -> "ExtractorConfig":
        known = {f: obj[f] for f in cls.__dataclass_fields__ if f in obj}
        unknown = set(obj) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown extractor config keys: {sorted(unknown)}")
        return cls(**known)
