"""Operator entry point.

Subcommands: synth, prepare, train, eval, overlap, bench, report. Every
command takes `--config <file>` (flat key=value lines) plus `--set key=value`
overrides; `--seed`-affected outputs are byte-reproducible. Exit codes:
0 success, 2 I/O or parse failure, 3 configuration or missing input,
4 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import asdict
from pathlib import Path

from .config import RunConfig, apply_overrides, load_config
from .errors import ConfigError, FormatError, NumericError, ParseError

FEATURE_FILES = {"Img": "img.feat", "CF": "cf.feat", "Text": "text.feat",
                 "JointText": "joint_text.feat"}


def _threads():
    import torch
    n = os.environ.get("ILR_THREADS")
    if n:
        torch.set_num_threads(max(int(n), 1))


def _config_from_args(args) -> RunConfig:
    cfg = RunConfig()
    if args.config:
        cfg = load_config(args.config, cfg)
    pairs = []
    for item in args.set or []:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        pairs.append(tuple(item.split("=", 1)))
    return apply_overrides(cfg, pairs)


def _load_dataset(cfg: RunConfig):
    from .data import Dataset, ingest_interactions, ingest_items
    data = Path(cfg.data_dir)
    records = ingest_interactions(data / "interactions.tsv")
    items = ingest_items(data / "items.tsv")
    return Dataset.build(records, items, k_core=cfg.k_core)


def _load_store(cfg: RunConfig):
    from .features import FeatureStore, load_feature_store
    store = FeatureStore()
    for name in FEATURE_FILES.values():
        path = Path(cfg.features_dir) / name
        if path.exists():
            store.add(load_feature_store(path))
    return store


def _require_checkpoint(cfg: RunConfig):
    if not Path(cfg.checkpoint).exists():
        raise ConfigError(f"checkpoint not found: {cfg.checkpoint}")


def cmd_synth(args) -> int:
    from .data import write_interactions, write_items
    from .features import save_feature_store
    from .synth import SyntheticSpec, drop_images, synth_generate

    cfg = _config_from_args(args)
    spec = SyntheticSpec(n_users=cfg.n_users, n_items=cfg.n_items,
                         latent_dim=cfg.latent_dim, noise=cfg.noise,
                         mean_seq_len=cfg.mean_seq_len, seed=cfg.seed,
                         desc_len=cfg.desc_len, attr_len=cfg.attr_len)
    records, items, store = synth_generate(spec)
    if cfg.drop_image_fraction > 0:
        items, store = drop_images(items, store, cfg.drop_image_fraction, cfg.seed)

    out = Path(cfg.data_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_interactions(records, out / "interactions.tsv")
    write_items(items, out / "items.tsv")
    feat_dir = Path(cfg.features_dir)
    feat_dir.mkdir(parents=True, exist_ok=True)
    written = {}
    for ftype, fname in FEATURE_FILES.items():
        matrix = store.get(ftype)
        if matrix is not None:
            save_feature_store(matrix, feat_dir / fname)
            written[ftype] = str(feat_dir / fname)
    manifest = {
        "seed": cfg.seed,
        "n_users": cfg.n_users,
        "n_items": cfg.n_items,
        "n_interactions": len(records),
        "items_with_images": sum(1 for r in items.values() if r.has_image),
        "feature_files": written,
        "config_hash": cfg.config_hash(),
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    print(json.dumps(manifest, indent=2, sort_keys=True))
    return 0


def cmd_prepare(args) -> int:
    from .data import (build_sequences, ingest_interactions, ingest_items, k_core_filter,
                       write_interactions)
    from .features import save_feature_store
    from .synth import cf_pretrain_cooccurrence

    cfg = _config_from_args(args)
    data = Path(cfg.data_dir)
    records = ingest_interactions(data / "interactions.tsv")
    items = ingest_items(data / "items.tsv")
    filtered = k_core_filter(records, cfg.k_core)
    if not filtered:
        raise ConfigError(f"k-core filter (k={cfg.k_core}) removed every interaction")
    seqs = build_sequences(filtered)
    out = Path(args.out or cfg.data_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_interactions(filtered, out / "interactions.tsv")
    if out != data:
        from .data import write_items
        write_items(items, out / "items.tsv")
    if args.train_cf:
        matrix = cf_pretrain_cooccurrence(filtered, dim=args.cf_dim,
                                          epochs=args.cf_epochs, seed=cfg.seed)
        feat_dir = Path(cfg.features_dir)
        feat_dir.mkdir(parents=True, exist_ok=True)
        save_feature_store(matrix, feat_dir / FEATURE_FILES["CF"])
    stats = {
        "n_interactions": len(filtered),
        "n_users": len({r.user_id for r in filtered}),
        "n_items": len({r.item_id for r in filtered}),
        "mean_seq_len": round(sum(len(s.items) for s in seqs) / max(len(seqs), 1), 3),
        "k_core": cfg.k_core,
        "config_hash": cfg.config_hash(),
    }
    (out / "prepare_manifest.json").write_text(json.dumps(stats, indent=2, sort_keys=True) + "\n")
    print(json.dumps(stats, indent=2, sort_keys=True))
    return 0


def _model_config(cfg: RunConfig):
    from .model import ModelConfig
    return ModelConfig(d_model=cfg.d_model, n_layers=cfg.n_layers, n_heads=cfg.n_heads,
                       ffn_dim=cfg.ffn_dim, max_context=cfg.max_context, d_s=cfg.d_s,
                       vocab_max=cfg.vocab_max, backbone_trainable=cfg.backbone_trainable)


def cmd_train(args) -> int:
    from .training import TrainConfig, save_train_state, train, write_log_csv, TrainState, AdamState

    cfg = _config_from_args(args)
    dataset = _load_dataset(cfg)
    store = _load_store(cfg)
    tc = TrainConfig(lr=cfg.lr, batch_size=cfg.batch_size, epochs=cfg.epochs,
                     seed=cfg.seed, active_types=cfg.active_types(), mode=cfg.mode,
                     backbone_trainable=cfg.backbone_trainable, patience=cfg.patience,
                     context_budget=cfg.train_budget, fallback=cfg.fallback,
                     two_stage=cfg.two_stage, val_negatives=cfg.n_negatives)
    result = train(dataset, store, _model_config(cfg), tc)
    ckpt = Path(cfg.checkpoint)
    ckpt.parent.mkdir(parents=True, exist_ok=True)
    extra = {"train.mode": cfg.mode, "train.types": cfg.types,
             "train.budget": cfg.train_budget, "train.fallback": cfg.fallback,
             "config_hash": cfg.config_hash()}
    result.bundle.save(ckpt, extra_config=extra)
    log_path = ckpt.with_suffix(".log.csv")
    write_log_csv(result.log_rows, log_path,
                  metadata={"seed": cfg.seed, "config_hash": cfg.config_hash()})
    summary = {"checkpoint": str(ckpt), "log": str(log_path),
               "best_epoch": result.best_epoch,
               "best_val_hit5": result.best_val_hit5,
               "epochs_run": len(result.history)}
    print(json.dumps(summary, indent=2, sort_keys=True))
    return 0


def cmd_eval(args) -> int:
    from .data import popularity_groups
    from .evalbench import evaluate, group_eval, length_groups, write_metrics_report, write_rows_csv
    from .model import ModelBundle

    cfg = _config_from_args(args)
    _require_checkpoint(cfg)
    dataset = _load_dataset(cfg)
    store = _load_store(cfg)
    bundle, ckpt_cfg, _ = ModelBundle.load(cfg.checkpoint)
    mode = ckpt_cfg.get("train.mode", cfg.mode)
    types = tuple(ckpt_cfg.get("train.types", cfg.types).split(","))
    fallback = cfg.fallback or ckpt_cfg.get("train.fallback") in ("True", "true")
    report = evaluate(bundle, dataset, store, ks=cfg.ks(), n_negatives=cfg.n_negatives,
                      seed=cfg.seed, mode=mode, context_budget=None, fallback=fallback,
                      active_types=types)
    report.metadata["config_hash"] = cfg.config_hash()

    out = Path(cfg.reports_dir)
    out.mkdir(parents=True, exist_ok=True)
    report.groups = {}
    if args.popularity_groups:
        pgroups = popularity_groups(dataset.records, cfg.popularity_groups)
        by_item = group_eval(report, pgroups, by="item", ks=cfg.ks())
        report.groups["popularity"] = {str(g): t for g, t in by_item.items()}
        rows = [{"group": g, "metric": m, "value": v, "run": cfg.types}
                for g, table in by_item.items() for m, v in table.items()]
        write_rows_csv(rows, ("group", "metric", "value", "run"),
                       out / "eval_groups_popularity.csv", metadata=report.metadata)
    if args.length_groups:
        lgroups = length_groups(dataset, cfg.bounds())
        by_user = group_eval(report, lgroups, by="user", ks=cfg.ks())
        report.groups["length"] = {str(g): t for g, t in by_user.items()}
        rows = [{"group": g, "metric": m, "value": v, "run": cfg.types}
                for g, table in by_user.items() for m, v in table.items()]
        write_rows_csv(rows, ("group", "metric", "value", "run"),
                       out / "eval_groups_length.csv", metadata=report.metadata)
    write_metrics_report(report, out / "eval_metrics.csv", out / "eval_metrics.json")
    print(json.dumps({"metrics": report.metrics, "n_users": report.n_users},
                     indent=2, sort_keys=True))
    return 0


def cmd_overlap(args) -> int:
    from .evalbench import overlap_report, write_histogram_csv
    from .features import load_feature_store

    cfg = _config_from_args(args)
    img_path = args.img or str(Path(cfg.features_dir) / FEATURE_FILES["Img"])
    joint_path = args.joint_text or str(Path(cfg.features_dir) / FEATURE_FILES["JointText"])
    for p in (img_path, joint_path):
        if not Path(p).exists():
            raise ConfigError(f"feature file not found: {p}")
    rep = overlap_report(load_feature_store(img_path), load_feature_store(joint_path),
                         seed=cfg.seed)
    out = Path(cfg.reports_dir)
    out.mkdir(parents=True, exist_ok=True)
    meta = {"seed": cfg.seed, "config_hash": cfg.config_hash()}
    doc = {"positive_mean": rep.positive_mean, "positive_std": rep.positive_std,
           "negative_mean": rep.negative_mean, "negative_std": rep.negative_std,
           "gap": rep.gap, "n_pairs": rep.n_pairs,
           "excluded_zero_rows": rep.excluded_zero_rows,
           "ref_positive_mean": rep.ref_positive_mean,
           "ref_negative_mean": rep.ref_negative_mean,
           "metadata": meta}
    (out / "overlap.json").write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    write_histogram_csv(rep.positive_hist, out / "overlap_positive.csv", metadata=meta)
    write_histogram_csv(rep.negative_hist, out / "overlap_negative.csv", metadata=meta)
    print(json.dumps(doc, indent=2, sort_keys=True))
    return 0


def cmd_bench(args) -> int:
    from .evalbench import (complexity_estimate, context_budget_sweep, mean_content_tokens,
                            timing_bench, token_histogram, write_histogram_csv, write_rows_csv)
    from .model import ModelBundle
    from .prompts import MODE_ATTRIBUTE, MODE_DESCRIPTION, MODE_IMAGE
    from .vocab import build_vocab
    from .model import vocab_corpus

    cfg = _config_from_args(args)
    dataset = _load_dataset(cfg)
    store = _load_store(cfg)
    out = Path(cfg.reports_dir)
    out.mkdir(parents=True, exist_ok=True)
    meta = {"seed": cfg.seed, "config_hash": cfg.config_hash()}
    modes = (MODE_IMAGE, MODE_ATTRIBUTE, MODE_DESCRIPTION)

    voc = build_vocab(vocab_corpus(dataset.items), cfg.vocab_max)
    mean_hist = sum(len(dataset.split.full_history(u)) - 1
                    for u in dataset.split.users) / max(len(dataset.split.users), 1)
    complexity_rows = []
    for mode in modes:
        hist = token_histogram(dataset, voc, mode)
        write_histogram_csv(hist.histogram(bin_width=50), out / f"token_hist_{mode.replace('+', '_')}.csv",
                            metadata={**meta, "mode": mode, "mean_tokens": round(hist.mean, 3)})
        per_item = mean_content_tokens(dataset, voc, mode)
        complexity_rows.append({
            "mode": mode, "mean_content_tokens": round(per_item, 3),
            "mean_history_len": round(mean_hist, 3),
            "complexity": complexity_estimate(per_item, mean_hist, cfg.d_model),
        })
    write_rows_csv(complexity_rows, ("mode", "mean_content_tokens", "mean_history_len", "complexity"),
                   out / "complexity.csv", metadata=meta)

    if Path(cfg.checkpoint).exists():
        bundle, ckpt_cfg, _ = ModelBundle.load(cfg.checkpoint)
        types = tuple(ckpt_cfg.get("train.types", cfg.types).split(","))
        rows = timing_bench(bundle, dataset, store, modes=modes, bounds=cfg.bounds(),
                            group_size=cfg.bench_group_size, seed=cfg.seed,
                            active_types=types, fallback=cfg.fallback)
        write_rows_csv(rows, ("group", "mode", "n_users", "total_tokens", "wall_seconds"),
                       out / "timing.csv", metadata=meta)
        budgets = cfg.budget_list()
        sweep = context_budget_sweep(bundle, dataset, store, budgets,
                                     (ckpt_cfg.get("train.mode", cfg.mode),),
                                     ks=cfg.ks(), n_negatives=cfg.n_negatives,
                                     seed=cfg.seed, active_types=types,
                                     fallback=cfg.fallback)
        columns = ("mode", "budget", "mean_retained_items", "max_retained_items") + \
            tuple(sorted(k for k in sweep[0] if k.startswith(("hit@", "ndcg@"))))
        write_rows_csv(sweep, columns, out / "budget_sweep.csv", metadata=meta)
    else:
        print("no checkpoint found; wrote token/complexity benchmarks only", file=sys.stderr)
    print(json.dumps({"reports_dir": str(out)}, indent=2, sort_keys=True))
    return 0


def cmd_report(args) -> int:
    from . import figures

    cfg = _config_from_args(args)
    out = Path(cfg.reports_dir)
    if not out.is_dir():
        raise ConfigError(f"reports directory not found: {out}")
    rendered = []
    hist_files = {p.stem.replace("token_hist_", ""): p for p in out.glob("token_hist_*.csv")}
    if hist_files:
        rendered.append(figures.render_token_histograms(hist_files, out / "token_hist.png"))
    pos, neg = out / "overlap_positive.csv", out / "overlap_negative.csv"
    if pos.exists() and neg.exists():
        means = {}
        overlap_json = out / "overlap.json"
        if overlap_json.exists():
            doc = json.loads(overlap_json.read_text())
            means = {"positive_mean": doc.get("positive_mean"),
                     "negative_mean": doc.get("negative_mean")}
        rendered.append(figures.render_overlap(pos, neg, out / "overlap.png", **means))
    if (out / "budget_sweep.csv").exists():
        rendered.append(figures.render_budget_sweep(out / "budget_sweep.csv",
                                                    out / "budget_sweep.png"))
    if (out / "timing.csv").exists():
        rendered.append(figures.render_timing(out / "timing.csv", out / "timing.png"))
    if (out / "eval_groups_popularity.csv").exists():
        rendered.append(figures.render_group_bars(out / "eval_groups_popularity.csv",
                                                  out / "eval_groups.png"))
    print(json.dumps({"rendered": [str(p) for p in rendered]}, indent=2, sort_keys=True))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ilrec",
        description="Single-token visual item representation for sequential recommendation")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="flat key=value config file")
        p.add_argument("--set", action="append", metavar="KEY=VALUE",
                       help="override a config key (repeatable)")
        p.add_argument("--seed", type=int, help="shorthand for --set seed=N")

    p = sub.add_parser("synth", help="generate a synthetic dataset and feature store",
                       formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    common(p)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("prepare", help="k-core filter a raw dataset; optionally train CF features",
                       formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    common(p)
    p.add_argument("--out", help="output directory (defaults to data_dir, in place)")
    p.add_argument("--train-cf", action="store_true", help="train co-occurrence CF features")
    p.add_argument("--cf-dim", type=int, default=24, help="CF embedding dimension")
    p.add_argument("--cf-epochs", type=int, default=5, help="CF training epochs")
    p.set_defaults(func=cmd_prepare)

    p = sub.add_parser("train", help="train a model and write a checkpoint + log",
                       formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint under the leave-one-out protocol",
                       formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    common(p)
    p.add_argument("--popularity-groups", action="store_true",
                   help="also report per item-popularity group")
    p.add_argument("--length-groups", action="store_true",
                   help="also report per user-length group")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("overlap", help="image/description similarity analysis",
                       formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    common(p)
    p.add_argument("--img", help="Img feature file (default: features_dir/img.feat)")
    p.add_argument("--joint-text", help="JointText feature file")
    p.set_defaults(func=cmd_overlap)

    p = sub.add_parser("bench", help="token, complexity, timing, and budget-sweep benchmarks",
                       formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    common(p)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("report", help="render figures from report files",
                       formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    common(p)
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "seed", None) is not None:
        args.set = (args.set or []) + [f"seed={args.seed}"]
    _threads()
    try:
        return args.func(args)
    except (ParseError, FormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 2
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 3
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
