"""Command-line entry point.

Subcommands cover the whole pipeline: curate a raw manifest, split it,
train the mean-variance head on embeddings, evaluate a checkpoint,
compare against the life-table baseline, generate synthetic datasets, and
render calibration reports.

Option precedence everywhere: explicit flags > --config file > built-in
defaults. The only environment variable read is the VLM API credential;
everything else is flags and files.
"""

from __future__ import annotations

import argparse
import glob
import json
import os
import sys

from . import actuarial, charts, curation, metrics, synthetic, training
from .dataset import (DatasetSplit, ManifestError, fit_normalization, load_manifest,
                      load_manifest_lenient, save_manifest, split_dataset)
from .embeddings import EmbeddingFormatError, read_embeddings, write_embeddings
from .head import CheckpointError, load_checkpoint, predict_batch, save_checkpoint


def _load_config(path: str | None) -> dict:
    if path is None:
        return {}
    with open(path, "r", encoding="utf-8") as fh:
        obj = json.load(fh)
    if not isinstance(obj, dict):
        raise ValueError(f"{path}: config must be a JSON object")
    return obj


def _pick(flag_value, config: dict, key: str, default):
    """flags > config file > defaults."""
    if flag_value is not None:
        return flag_value
    if key in config:
        return config[key]
    return default


def _targets(records) -> dict[str, float]:
    return {r.id: r.remaining_lifespan for r in records}


def _ensure_out(path: str) -> str:
    os.makedirs(path, exist_ok=True)
    return path


def _bucket_mode(flag: str) -> str:
    return {"true": "by_true_target", "pred": "by_predicted_mu"}[flag]


def _load_life_table(path: str) -> actuarial.LifeTable:
    """One CSV file, or a directory of annual CSVs averaged together."""
    if os.path.isdir(path):
        files = sorted(glob.glob(os.path.join(path, "*.csv")))
        if not files:
            raise actuarial.LifeTableError(f"{path}: no .csv life tables in directory")
        tables = [actuarial.load_life_table(f) for f in files]
        return actuarial.average_tables(tables)
    return actuarial.load_life_table(path)


def cmd_synth(args) -> int:
    config_file = _load_config(args.config)
    fields = {}
    for key in synthetic.SyntheticConfig.__dataclass_fields__:
        fields[key] = _pick(getattr(args, key, None), config_file, key,
                            getattr(synthetic.SyntheticConfig, key))
    config = synthetic.SyntheticConfig(**fields)

    store, records, truth = synthetic.generate(config)
    out = _ensure_out(args.out)
    save_manifest(records, os.path.join(out, "manifest.jsonl"))
    write_embeddings(store, os.path.join(out, "embeddings.emb1"))
    synthetic.save_ground_truth(truth, os.path.join(out, "truth.csv"))
    print(f"generated {config.n_samples} samples (dim {config.input_dim}, "
          f"mu {config.mu_family}, sigma {config.sigma_family}) into {out}")
    return 0


def cmd_split(args) -> int:
    records = load_manifest(args.manifest)
    split = split_dataset(records, seed=args.seed if args.seed is not None else 1,
                          fraction=args.fraction)
    out = _ensure_out(args.out)
    path = os.path.join(out, "split.json")
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(split.to_json_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(f"{len(split.train_ids)} train / {len(split.test_ids)} test -> {path}")
    return 0


def _load_split(path: str) -> DatasetSplit:
    with open(path, "r", encoding="utf-8") as fh:
        return DatasetSplit.from_json_dict(json.load(fh))


def cmd_train(args) -> int:
    config_file = _load_config(args.config)
    overrides = {
        "schedule": args.schedule,
        "epochs_phase1": args.epochs_phase1,
        "epochs_phase2": args.epochs_phase2,
        "batch_size": args.batch_size,
        "learning_rate": args.learning_rate,
        "hidden_dim": args.hidden_dim,
        "seed": args.seed,
    }
    merged = dict(config_file)
    for key, value in overrides.items():
        if value is not None:
            merged[key] = value
    merged.pop("fraction", None)
    config = training.TrainConfig.from_json_dict(merged)

    records = load_manifest(args.manifest)
    store = read_embeddings(args.embeddings)
    if args.split:
        split = _load_split(args.split)
    else:
        fraction = _pick(args.fraction, config_file, "fraction", 0.8)
        split = split_dataset(records, seed=config.seed, fraction=fraction)

    targets = _targets(records)
    stats = fit_normalization([targets[i] for i in split.train_ids])
    params, report = training.train(store, split, stats, targets, config)

    out = _ensure_out(args.out)
    checkpoint = os.path.join(out, "head.mve1")
    save_checkpoint(params, stats, checkpoint, train_config_hash=config.config_hash())
    report.checkpoint_path = checkpoint
    training.write_training_log(report, os.path.join(out, "training_log.jsonl"))
    with open(os.path.join(out, "split.json"), "w", encoding="utf-8") as fh:
        json.dump(split.to_json_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")

    if report.diverged:
        print("warning: training diverged; checkpoint holds the last finite epoch",
              file=sys.stderr)
    if report.epochs:
        last = report.epochs[-1]
        print(f"epoch {last.epoch} ({last.phase}): train {last.train_loss:.4f}"
              + (f", test {last.test_loss:.4f}" if last.test_loss is not None else ""))
    print(f"checkpoint -> {checkpoint}")
    return 0


def _evaluate(args) -> metrics.EvalReport:
    records = load_manifest(args.manifest)
    store = read_embeddings(args.embeddings)
    params, stats, _ = load_checkpoint(args.checkpoint)
    if params.input_dim != store.dim:
        raise CheckpointError(
            f"checkpoint expects dim {params.input_dim} but embeddings have dim {store.dim}")

    by_id = {r.id: r for r in records}
    if args.split:
        ids = list(_load_split(args.split).test_ids)
        missing = [i for i in ids if i not in by_id]
        if missing:
            raise ManifestError(f"split ids missing from manifest: {missing[:5]}")
    else:
        ids = [r.id for r in records]

    predictions = predict_batch(params, store, ids, stats)
    targets = [by_id[i].remaining_lifespan for i in ids]
    return metrics.full_report(
        predictions, targets, stats,
        buckets=args.buckets if args.buckets is not None else 10,
        mode=_bucket_mode(args.bucket_mode),
        bucket_max=args.bucket_max if args.bucket_max is not None else 60.0)


def _print_report(report: metrics.EvalReport) -> None:
    print(f"mae            {report.mae:.4f} years")
    print(f"mean_gnll      {report.mean_gnll:.4f} (normalized units)")
    print(f"ece_bucketed   {report.ece_bucketed:.4f} years")
    print(f"ece_one        {report.ece_one:.4f} years")
    print(f"ece_pointwise  {report.ece_pointwise:.4f} years")


def cmd_evaluate(args) -> int:
    report = _evaluate(args)
    out = _ensure_out(args.out)
    metrics.save_report(report, os.path.join(out, "report.json"))
    if args.bucket_csv:
        metrics.save_bucket_csv(report, os.path.join(out, "buckets.csv"))
    _print_report(report)
    return 0


def cmd_report(args) -> int:
    report = _evaluate(args)
    out = _ensure_out(args.out)
    metrics.save_report(report, os.path.join(out, "report.json"))
    charts.save_bucket_chart(report, os.path.join(out, "report.svg"))
    _print_report(report)
    print(f"chart -> {os.path.join(out, 'report.svg')}")
    return 0


def cmd_baseline(args) -> int:
    records = load_manifest(args.manifest)
    table = _load_life_table(args.life_table)
    value = actuarial.baseline_mae(records, table)
    print(f"life-table baseline mae {value:.4f} years "
          f"({table.label}, {len(records)} records)")
    if args.out:
        out = _ensure_out(args.out)
        with open(os.path.join(out, "baseline.json"), "w", encoding="utf-8") as fh:
            json.dump({"mae": value, "n_records": len(records),
                       "table_label": table.label}, fh, indent=2, sort_keys=True)
            fh.write("\n")
    return 0


def cmd_curate(args) -> int:
    config_file = _load_config(args.config)
    criteria = curation.CurationCriteria(**config_file.get("criteria", {}))

    vlm_client = None
    wikidata_client = None
    if not args.dry_run:
        vlm_conf = config_file.get("vlm")
        if vlm_conf:
            vlm_client = curation.VlmClient(curation.VlmClientConfig(**vlm_conf))
        wiki_conf = config_file.get("wikidata", {})
        if wiki_conf is not None:
            wikidata_client = curation.WikidataClient(**wiki_conf)

    records, diagnostics = load_manifest_lenient(args.manifest)
    for message in diagnostics:
        print(f"skipped: {message}", file=sys.stderr)

    accepted, decisions = curation.curate(
        records, criteria,
        vlm_client=vlm_client,
        wikidata_client=wikidata_client,
        local_only=args.dry_run,
        parallelism=config_file.get("parallelism", 8))

    out = _ensure_out(args.out)
    save_manifest(accepted, os.path.join(out, "manifest.jsonl"))
    curation.write_audit_log(decisions, os.path.join(out, "audit.jsonl"))
    print(f"accepted {len(accepted)} / rejected {len(decisions) - len(accepted)} "
          f"of {len(decisions)} records -> {out}")
    return 0


def _add_bucket_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--buckets", type=int, default=None, help="bucket count (default 10)")
    p.add_argument("--bucket-max", type=float, default=None,
                   help="upper edge of the last bucket in years (default 60)")
    p.add_argument("--bucket-mode", choices=("true", "pred"), default="true",
                   help="bucket by true lifespan or by predicted mean")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lifespan",
        description="Train and evaluate uncertainty-aware remaining-lifespan "
                    "predictors over precomputed image embeddings.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic dataset with known truth")
    p.add_argument("--out", required=True)
    p.add_argument("--config", default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--n-samples", dest="n_samples", type=int, default=None)
    p.add_argument("--dim", dest="input_dim", type=int, default=None)
    p.add_argument("--mu-family", dest="mu_family", choices=synthetic.MU_FAMILIES,
                   default=None)
    p.add_argument("--sigma-family", dest="sigma_family",
                   choices=synthetic.SIGMA_FAMILIES, default=None)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("split", help="deterministic train/test split of a manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--fraction", type=float, default=0.8)
    p.set_defaults(func=cmd_split)

    p = sub.add_parser("train", help="train the mean-variance head")
    p.add_argument("--manifest", required=True)
    p.add_argument("--embeddings", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config", default=None, help="JSON file of training settings")
    p.add_argument("--split", default=None, help="reuse an existing split.json")
    p.add_argument("--fraction", type=float, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--schedule", choices=training.SCHEDULES, default=None)
    p.add_argument("--epochs-phase1", type=int, default=None)
    p.add_argument("--epochs-phase2", type=int, default=None)
    p.add_argument("--batch-size", type=int, default=None)
    p.add_argument("--learning-rate", type=float, default=None)
    p.add_argument("--hidden-dim", type=int, default=None)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="metrics for a checkpoint on a manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--embeddings", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--split", default=None, help="evaluate the split's test ids only")
    p.add_argument("--out", required=True)
    p.add_argument("--bucket-csv", action="store_true",
                   help="also write the bucket table as CSV")
    _add_bucket_flags(p)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("report", help="evaluate and render the calibration chart")
    p.add_argument("--manifest", required=True)
    p.add_argument("--embeddings", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--split", default=None)
    p.add_argument("--out", required=True)
    _add_bucket_flags(p)
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("baseline", help="life-table expected-lifespan baseline MAE")
    p.add_argument("--manifest", required=True)
    p.add_argument("--life-table", required=True,
                   help="CSV file, or directory of annual CSVs to average")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_baseline)

    p = sub.add_parser("curate", help="filter a raw manifest by the curation criteria")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config", default=None,
                   help="JSON with criteria/vlm/wikidata/parallelism settings")
    p.add_argument("--dry-run", action="store_true",
                   help="local checks only, no network calls")
    p.set_defaults(func=cmd_curate)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (OSError, ManifestError, EmbeddingFormatError, CheckpointError,
            actuarial.LifeTableError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
