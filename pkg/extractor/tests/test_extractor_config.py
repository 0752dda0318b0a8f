"""ExtractorConfig defaults, JSON round trips, and validation."""

import pytest

from embed_extractor.config import ExtractorConfig


def test_defaults_pin_the_reference_setup():
    config = ExtractorConfig()
    assert config.backbone == "dinov2_vitg14_reg"
    assert config.face_size == 224
    assert config.whole_size == 1022
    assert config.normalization_mean == (0.485, 0.456, 0.406)
    assert config.normalization_std == (0.229, 0.224, 0.225)
    assert config.device == "cpu"
    assert config.batch_size == 16


def test_json_round_trip():
    config = ExtractorConfig(backbone="fixed-projection-8", face_size=32,
                             whole_size=48, batch_size=3)
    again = ExtractorConfig.from_json_dict(config.to_json_dict())
    assert again == config


def test_json_dict_uses_lists_for_channel_constants():
    out = ExtractorConfig().to_json_dict()
    assert out["normalization_mean"] == [0.485, 0.456, 0.406]
    assert out["normalization_std"] == [0.229, 0.224, 0.225]


def test_channel_constants_coerced_to_float_tuples():
    config = ExtractorConfig(normalization_mean=[0.5, 0.5, 0.5],
                             normalization_std=[1, 1, 1])
    assert config.normalization_mean == (0.5, 0.5, 0.5)
    assert config.normalization_std == (1.0, 1.0, 1.0)
    assert isinstance(config.normalization_std[0], float)


def test_partial_dict_keeps_other_defaults():
    config = ExtractorConfig.from_json_dict({"backbone": "fixed-projection-8"})
    assert config.backbone == "fixed-projection-8"
    assert config.face_size == 224
    assert config.batch_size == 16


def test_unknown_key_rejected():
    with pytest.raises(ValueError, match="unknown extractor config keys.*bogus"):
        ExtractorConfig.from_json_dict({"bogus": 1})


@pytest.mark.parametrize("kwargs", [
    {"backbone": ""},
    {"face_size": 0},
    {"whole_size": -1},
    {"batch_size": 0},
    {"device": ""},
    {"normalization_mean": (0.5, 0.5)},
    {"normalization_mean": (0.5, float("nan"), 0.5)},
    {"normalization_mean": (0.5, float("inf"), 0.5)},
    {"normalization_std": (0.2, 0.0, 0.2)},
    {"normalization_std": (0.2, -0.1, 0.2)},
])
def test_invalid_configs_rejected(kwargs):
    with pytest.raises(ValueError):
        ExtractorConfig(**kwargs)
