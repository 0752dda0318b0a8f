"""Command-line entry point.

One subcommand, ``extract``, turns a manifest into an EMB1 file plus a
skip log. Option precedence: explicit flags > --config file > built-in
defaults. Nothing is read from the environment; the backbone, device,
and batch size are plain config.
"""

from __future__ import annotations

import argparse
import json
import sys

from .config import ExtractorConfig
from .emb1 import Emb1WriteError
from .extract import extract
from .manifest import ManifestError, load_extraction_manifest
from .preprocess import ImageReadError, KNOWN_TAGS


def _load_config(path: str | None) -> dict:
    if path is None:
        return {}
    with open(path, "r", encoding="utf-8") as fh:
        obj = json.load(fh)
    if not isinstance(obj, dict):
        raise ValueError(f"{path}: config must be a JSON object")
    return obj


def cmd_extract(args) -> int:
    merged = _load_config(args.config)
    for key, value in (("backbone", args.backbone), ("device", args.device),
                       ("batch_size", args.batch_size)):
        if value is not None:
            merged[key] = value
    config = ExtractorConfig.from_json_dict(merged)
    records = load_extraction_manifest(args.manifest, tag_default=args.tag_default)
    result = extract(records, config, args.out, skip_log_path=args.skip_log)
    for skip in result.skips:
        print(f"skipped {skip.id}: {skip.reason}", file=sys.stderr)
    print(f"wrote {len(result.ids)} rows (dim {result.dim}) to {result.out_path}")
    print(f"skipped {len(result.skips)} of {len(records)}; skip log: {result.skip_log_path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="embed-extractor",
        description="Embed manifest images with a vision-transformer backbone.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("extract", help="embed manifest images into an EMB1 file")
    p.add_argument("--manifest", required=True, help="JSONL manifest of image records")
    p.add_argument("--out", required=True, help="output EMB1 path")
    p.add_argument("--tag-default", default="faces", choices=KNOWN_TAGS,
                   help="dataset_tag for records that do not carry one")
    p.add_argument("--config", default=None, help="JSON file of extractor settings")
    p.add_argument("--backbone", default=None, help="backbone identifier; overrides config")
    p.add_argument("--device", default=None, help="inference device; overrides config")
    p.add_argument("--batch-size", type=int, default=None, help="overrides config")
    p.add_argument("--skip-log", default=None,
                   help="skip-log path (default: <out>.skips.jsonl)")
    p.set_defaults(func=cmd_extract)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (OSError, ManifestError, ImageReadError, Emb1WriteError, RuntimeError,
            ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
