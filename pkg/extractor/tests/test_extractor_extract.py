"""Manifest loading and the extract pipeline: ordering, batching, skips."""

import json

import numpy as np
import pytest

from embed_extractor.config import ExtractorConfig
from embed_extractor.extract import default_skip_log_path, extract
from embed_extractor.manifest import ManifestError, load_extraction_manifest
from embed_extractor.preprocess import preprocess_image

from lifespan.embeddings import read_embeddings

SMALL = ExtractorConfig(backbone="fixed-projection-8", face_size=32, whole_size=48,
                        batch_size=4)


class RecordingBackbone:
    """Embeds to zeros but remembers every batch shape it was given."""

    def __init__(self, dim=4):
        self.name = "recording"
        self.dim = dim
        self.batch_shapes = []

    def embed(self, batch):
        self.batch_shapes.append(tuple(batch.shape))
        return np.zeros((batch.shape[0], self.dim), dtype=np.float32)


# ---------------------------------------------------------------------------
# manifest loading


def test_manifest_order_and_extra_keys_ignored(write_manifest):
    path = write_manifest([
        {"id": "b", "image_path": "x.png", "dataset_tag": "whole",
         "birth_date": 1900.0, "photo_date": 1950.0, "death_date": 1960.0},
        {"id": "a", "image_path": "y.png", "dataset_tag": "faces",
         "wikidata_id": "Q1"},
    ])
    records = load_extraction_manifest(path)
    assert [r.id for r in records] == ["b", "a"]
    assert records[0].dataset_tag == "whole"
    assert records[1].image_path == "y.png"


def test_missing_tag_gets_default(write_manifest):
    path = write_manifest([{"id": "a", "image_path": "x.png"}])
    assert load_extraction_manifest(path)[0].dataset_tag == "faces"
    assert load_extraction_manifest(path, tag_default="whole")[0].dataset_tag == "whole"


def test_null_tag_gets_default(write_manifest):
    path = write_manifest([{"id": "a", "image_path": "x.png", "dataset_tag": None}])
    assert load_extraction_manifest(path, tag_default="legacy")[0].dataset_tag == "legacy"


def test_bad_tag_default_rejected(write_manifest):
    path = write_manifest([{"id": "a", "image_path": "x.png"}])
    with pytest.raises(ManifestError, match="tag_default"):
        load_extraction_manifest(path, tag_default="portraits")


def test_blank_lines_skipped(write_manifest):
    path = write_manifest([
        {"id": "a", "image_path": "x.png", "dataset_tag": "faces"},
        "",
        {"id": "b", "image_path": "y.png", "dataset_tag": "faces"},
    ])
    assert [r.id for r in load_extraction_manifest(path)] == ["a", "b"]


def test_duplicate_id_rejected_with_line(write_manifest):
    path = write_manifest([
        {"id": "a", "image_path": "x.png"},
        {"id": "b", "image_path": "y.png"},
        {"id": "a", "image_path": "z.png"},
    ])
    with pytest.raises(ManifestError, match=r":3: duplicate id 'a'"):
        load_extraction_manifest(path)


def test_invalid_json_rejected_with_line(write_manifest):
    path = write_manifest([
        {"id": "a", "image_path": "x.png"},
        "{not json",
    ])
    with pytest.raises(ManifestError, match=r":2: invalid JSON"):
        load_extraction_manifest(path)


def test_non_object_line_rejected(write_manifest):
    path = write_manifest(["[1, 2, 3]"])
    with pytest.raises(ManifestError, match="must be a JSON object"):
        load_extraction_manifest(path)


@pytest.mark.parametrize("row", [
    {"image_path": "x.png"},
    {"id": "", "image_path": "x.png"},
    {"id": "a"},
    {"id": "a", "image_path": ""},
    {"id": 7, "image_path": "x.png"},
])
def test_missing_or_bad_required_fields_rejected(write_manifest, row):
    path = write_manifest([row])
    with pytest.raises(ManifestError):
        load_extraction_manifest(path)


def test_unknown_tag_rejected(write_manifest):
    path = write_manifest([{"id": "a", "image_path": "x.png", "dataset_tag": "crops"}])
    with pytest.raises(ManifestError, match="unknown dataset_tag 'crops'"):
        load_extraction_manifest(path)


def test_empty_manifest_rejected(write_manifest):
    path = write_manifest([])
    with pytest.raises(ManifestError, match="no records"):
        load_extraction_manifest(path)


# ---------------------------------------------------------------------------
# extraction


def _manifest_with_failures(make_png, write_manifest, tmp_path):
    junk = tmp_path / "junk.png"
    junk.write_bytes(b"definitely not a png")
    rows = [
        {"id": "r0", "image_path": make_png("p0.png", tint=0), "dataset_tag": "faces"},
        {"id": "r1", "image_path": str(tmp_path / "missing.png"), "dataset_tag": "faces"},
        {"id": "r2", "image_path": make_png("p2.png", tint=80), "dataset_tag": "whole"},
        {"id": "r3", "image_path": str(junk), "dataset_tag": "legacy"},
        {"id": "r4", "image_path": make_png("p4.png", tint=160), "dataset_tag": "faces"},
    ]
    return load_extraction_manifest(write_manifest(rows))


def test_rows_follow_manifest_order_and_every_record_is_accounted(
        make_png, write_manifest, tmp_path):
    records = _manifest_with_failures(make_png, write_manifest, tmp_path)
    out = str(tmp_path / "out.emb1")
    result = extract(records, SMALL, out)
    assert result.ids == ["r0", "r2", "r4"]
    assert [s.id for s in result.skips] == ["r1", "r3"]
    assert len(result.ids) + len(result.skips) == len(records)
    store = read_embeddings(out)
    assert store.ids == ["r0", "r2", "r4"]
    assert store.dim == 8
    for skip in result.skips:
        assert skip.image_path in skip.reason


def test_skip_log_lines_match_skips(make_png, write_manifest, tmp_path):
    records = _manifest_with_failures(make_png, write_manifest, tmp_path)
    out = str(tmp_path / "out.emb1")
    result = extract(records, SMALL, out)
    lines = [json.loads(line) for line in open(result.skip_log_path, encoding="utf-8")]
    assert [line["id"] for line in lines] == ["r1", "r3"]
    for line, skip in zip(lines, result.skips):
        assert set(line) == {"id", "image_path", "reason"}
        assert line["image_path"] == skip.image_path
        assert line["reason"] == skip.reason


def test_default_skip_log_path_derived_from_out(make_png, write_manifest, tmp_path):
    records = _manifest_with_failures(make_png, write_manifest, tmp_path)
    out = str(tmp_path / "deep.emb1")
    result = extract(records, SMALL, out)
    assert result.skip_log_path == out + ".skips.jsonl"
    assert default_skip_log_path("x.emb1") == "x.emb1.skips.jsonl"


def test_skip_log_empty_when_all_images_readable(make_png, write_manifest, tmp_path):
    records = load_extraction_manifest(write_manifest([
        {"id": "a", "image_path": make_png("ok.png"), "dataset_tag": "faces"},
    ]))
    result = extract(records, SMALL, str(tmp_path / "ok.emb1"))
    assert result.skips == []
    assert open(result.skip_log_path, encoding="utf-8").read() == ""


def test_all_unreadable_yields_empty_emb1(write_manifest, tmp_path):
    records = load_extraction_manifest(write_manifest([
        {"id": "a", "image_path": str(tmp_path / "no1.png")},
        {"id": "b", "image_path": str(tmp_path / "no2.png")},
    ]))
    out = str(tmp_path / "none.emb1")
    result = extract(records, SMALL, out)
    assert result.ids == []
    assert len(result.skips) == 2
    store = read_embeddings(out)
    assert store.ids == []
    assert store.dim == 8


def test_rerun_is_bitwise_identical(make_png, write_manifest, tmp_path):
    records = _manifest_with_failures(make_png, write_manifest, tmp_path)
    first = str(tmp_path / "first.emb1")
    second = str(tmp_path / "second.emb1")
    extract(records, SMALL, first)
    extract(records, SMALL, second)
    assert open(first, "rb").read() == open(second, "rb").read()
    assert (open(first + ".skips.jsonl", "rb").read()
            == open(second + ".skips.jsonl", "rb").read())


def test_row_matches_single_image_embedding(make_png, write_manifest, tmp_path):
    records = load_extraction_manifest(write_manifest([
        {"id": "a", "image_path": make_png("a.png", tint=10), "dataset_tag": "faces"},
        {"id": "b", "image_path": make_png("b.png", tint=90), "dataset_tag": "faces"},
    ]))
    out = str(tmp_path / "pair.emb1")
    from embed_extractor.backbones import load_backbone
    backbone = load_backbone(SMALL.backbone)
    extract(records, SMALL, out, backbone=backbone)
    store = read_embeddings(out)
    arr = preprocess_image(records[1].image_path, SMALL.face_size,
                           SMALL.normalization_mean, SMALL.normalization_std)
    alone = backbone.embed(arr[None])[0]
    assert store.row("b").tobytes() == alone.tobytes()


def test_batches_cut_at_resolution_changes(make_png, write_manifest, tmp_path):
    records = load_extraction_manifest(write_manifest([
        {"id": "a", "image_path": make_png("a.png"), "dataset_tag": "faces"},
        {"id": "b", "image_path": make_png("b.png"), "dataset_tag": "whole"},
        {"id": "c", "image_path": make_png("c.png"), "dataset_tag": "faces"},
    ]))
    backbone = RecordingBackbone()
    result = extract(records, SMALL, str(tmp_path / "mix.emb1"), backbone=backbone)
    assert backbone.batch_shapes == [(1, 3, 32, 32), (1, 3, 48, 48), (1, 3, 32, 32)]
    assert result.ids == ["a", "b", "c"]


def test_legacy_shares_face_resolution_and_batches(make_png, write_manifest, tmp_path):
    records = load_extraction_manifest(write_manifest([
        {"id": "a", "image_path": make_png("a.png"), "dataset_tag": "faces"},
        {"id": "b", "image_path": make_png("b.png"), "dataset_tag": "legacy"},
    ]))
    backbone = RecordingBackbone()
    extract(records, SMALL, str(tmp_path / "fl.emb1"), backbone=backbone)
    assert backbone.batch_shapes == [(2, 3, 32, 32)]


def test_batch_size_limits_batches(make_png, write_manifest, tmp_path):
    rows = [{"id": f"r{i}", "image_path": make_png(f"im{i}.png", tint=i),
             "dataset_tag": "faces"} for i in range(5)]
    records = load_extraction_manifest(write_manifest(rows))
    backbone = RecordingBackbone()
    config = ExtractorConfig(backbone="fixed-projection-8", face_size=32,
                             whole_size=48, batch_size=2)
    extract(records, config, str(tmp_path / "batched.emb1"), backbone=backbone)
    assert backbone.batch_shapes == [(2, 3, 32, 32), (2, 3, 32, 32), (1, 3, 32, 32)]


def test_skips_do_not_break_batching(make_png, write_manifest, tmp_path):
    records = load_extraction_manifest(write_manifest([
        {"id": "a", "image_path": make_png("a.png"), "dataset_tag": "faces"},
        {"id": "bad", "image_path": str(tmp_path / "no.png"), "dataset_tag": "faces"},
        {"id": "b", "image_path": make_png("b.png"), "dataset_tag": "faces"},
    ]))
    backbone = RecordingBackbone()
    result = extract(records, SMALL, str(tmp_path / "gap.emb1"), backbone=backbone)
    assert backbone.batch_shapes == [(2, 3, 32, 32)]
    assert result.ids == ["a", "b"]
    assert [s.id for s in result.skips] == ["bad"]


def test_backbone_shape_lie_is_caught(make_png, write_manifest, tmp_path):
    class LyingBackbone:
        name = "liar"
        dim = 4

        def embed(self, batch):
            return np.zeros((batch.shape[0], 5), dtype=np.float32)

    records = load_extraction_manifest(write_manifest([
        {"id": "a", "image_path": make_png("a.png"), "dataset_tag": "faces"},
    ]))
    with pytest.raises(RuntimeError, match="expected"):
        extract(records, SMALL, str(tmp_path / "lie.emb1"), backbone=LyingBackbone())
