"""Command-line entry point: prepare | train | evaluate | ablate | grid |
export-embeddings. Exit codes: 0 ok, 2 config error, 3 data error,
4 numerical divergence."""

from __future__ import annotations

import argparse
import dataclasses
import itertools
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import torch

from .config import TrainConfig, parse_config
from .errors import ConfigError, DataError, MissingPrerequisite, NumericalError
from .evaluate import (
    ABLATION_ALIGN,
    ABLATION_ENHANCE,
    evaluate_model,
    export_embeddings,
    run_ablation,
    variant_config,
    write_metrics_tsv,
)
from .graphs import build_item_knn, build_norm_adjacency, load_item_graph, save_item_graph
from .ingest import (
    apply_k_core,
    build_split,
    load_features,
    load_interactions,
    read_split,
    write_split,
)
from .model import load_checkpoint, save_checkpoint
from .train import GraphBundle, train_loop

GRID_PRESET = {
    "mask_ratio": [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7],
    "lambda_f": [0.5, 1.0, 1.5, 2.0, 2.5],
    "lambda_g": [1e-2, 1e-3, 1e-4],
    "tau": [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8],
    "lambda_align": [0.1, 0.2, 0.3, 1.0, 2.0, 3.0],
}


def _add_config_flags(parser: argparse.ArgumentParser):
    # one flag per TrainConfig field; values are parsed/validated by parse_config
    for f in dataclasses.fields(TrainConfig):
        parser.add_argument("--" + f.name.replace("_", "-"), default=None)


def _overrides_from_args(args) -> dict:
    names = {f.name for f in dataclasses.fields(TrainConfig)}
    return {name: getattr(args, name) for name in names if getattr(args, name, None) is not None}


def _resolved_config(args) -> TrainConfig:
    return parse_config(args.config, _overrides_from_args(args))


def _require(path: Path, artifact: str) -> Path:
    if not path.exists():
        raise MissingPrerequisite(f"{artifact} ({path})")
    return path


def _load_prepared(prepared_dir: Path, config: TrainConfig):
    split = read_split(_require(prepared_dir, "prepared data directory"))
    graphs = {}
    feats = {}
    for m, fname in (("v", "visual"), ("t", "textual")):
        graphs[m] = load_item_graph(_require(prepared_dir / f"item_graph_{m}.iig", f"{fname} item graph"))
        feat_path = _require(prepared_dir / f"{fname}.mmf1", f"{fname} features")
        fm = load_features(feat_path, split.item_map, m)
        feats[m] = torch.from_numpy(fm.values)
    adj = build_norm_adjacency(split)
    return split, GraphBundle(adj=adj, item_graphs=graphs, features=feats)


def write_manifest(out_dir: Path, config: TrainConfig, extra: dict):
    manifest = {
        "config": config.to_dict(),
        "config_hash": config.config_hash(),
        **extra,
    }
    (out_dir / "run_manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))
    return manifest


def cmd_prepare(args) -> int:
    config = _resolved_config(args)
    data_dir = Path(args.data_dir)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_manifest(out_dir, config, {
        "subcommand": "prepare",
        "data_dir": str(data_dir),
        "seed": config.seed,
    })

    raw = load_interactions(_require(data_dir / "interactions.tsv", "interactions"))
    raw = apply_k_core(raw, config.k_core)
    split = build_split(raw, seed=config.seed)
    write_split(split, out_dir)

    for m, fname in (("v", "visual"), ("t", "textual")):
        src = _require(data_dir / f"{fname}.mmf1", f"{fname} features")
        fm = load_features(src, split.item_map, m)
        graph = build_item_knn(fm, min(config.knn_k, split.n_items - 1), config.normalize_item_graph)
        save_item_graph(graph, out_dir / f"item_graph_{m}.iig")
        # keep a copy of the raw features next to the split for later stages
        from .ingest import write_mmf1
        inv = sorted(split.item_map, key=split.item_map.get)
        write_mmf1(out_dir / f"{fname}.mmf1", fm.values, inv)
    print(f"prepared {split.n_users} users / {split.n_items} items "
          f"({split.n_interactions} interactions) -> {out_dir}")
    return 0


def cmd_train(args) -> int:
    config = _resolved_config(args)
    prepared = Path(args.data_dir)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    split, bundle = _load_prepared(prepared, config)
    write_manifest(out_dir, config, {
        "subcommand": "train",
        "data_dir": str(prepared),
        "seed": config.seed,
    })
    result = train_loop(config, split, bundle,
                        log_path=out_dir / "train.log.jsonl", quiet=args.quiet)
    save_checkpoint(result.state, out_dir / "model.mnt", config.config_hash())
    print(f"best epoch {result.best_epoch}: valid R@20={result.best_valid_recall20:.4f} "
          f"-> {out_dir / 'model.mnt'}")
    return 0


def cmd_evaluate(args) -> int:
    config = _resolved_config(args)
    prepared = Path(args.data_dir)
    ckpt = _require(Path(args.checkpoint), "checkpoint")
    split, bundle = _load_prepared(prepared, config)
    state, _ = load_checkpoint(ckpt)
    report = evaluate_model(state, bundle, config, split, target=args.target)
    rows = [("full", *report.row())]
    out = Path(args.out_dir) if args.out_dir else None
    if out:
        out.mkdir(parents=True, exist_ok=True)
        write_metrics_tsv(rows, out / "metrics.tsv")
        if args.per_user:
            with (out / "per_user.jsonl").open("w", encoding="utf-8") as fh:
                for u, detail in sorted(report.per_user.items()):
                    fh.write(json.dumps({"user": u, **detail}) + "\n")
    print(f"R@10={report.recall10:.4f} R@20={report.recall20:.4f} "
          f"N@10={report.ndcg10:.4f} N@20={report.ndcg20:.4f}")
    return 0


def cmd_ablate(args) -> int:
    config = _resolved_config(args)
    prepared = Path(args.data_dir)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    split, bundle = _load_prepared(prepared, config)
    variants = args.variants.split(",") if args.variants else list(
        dict.fromkeys(ABLATION_ALIGN + ABLATION_ENHANCE))
    for name in variants:
        variant_config(config, name)  # fail fast on unknown names
    write_manifest(out_dir, config, {
        "subcommand": "ablate",
        "data_dir": str(prepared),
        "variants": variants,
    })
    rows = run_ablation(config, variants, split, bundle, target=args.target, log_dir=out_dir)
    write_metrics_tsv(rows, out_dir / "ablation.tsv")
    for row in rows:
        print("\t".join(str(x) for x in row))
    return 0


def _parse_grid_spec(spec: str) -> dict:
    """"key=v1,v2;key2=v3" -> {key: [v1, v2], key2: [v3]}"""
    grid = {}
    for part in spec.split(";"):
        part = part.strip()
        if not part:
            continue
        key, _, values = part.partition("=")
        grid[key.strip()] = [float(v) for v in values.split(",")]
    return grid


def cmd_grid(args) -> int:
    config = _resolved_config(args)
    prepared = Path(args.data_dir)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    split, bundle = _load_prepared(prepared, config)
    grid = _parse_grid_spec(args.grid) if args.grid else dict(GRID_PRESET)
    for key in grid:
        if key not in {f.name for f in dataclasses.fields(TrainConfig)}:
            raise ConfigError(f"unknown grid key {key!r}")
    keys = sorted(grid)
    combos = list(itertools.product(*(grid[k] for k in keys)))
    write_manifest(out_dir, config, {
        "subcommand": "grid",
        "data_dir": str(prepared),
        "grid": grid,
    })

    def one_run(combo):
        cfg = dataclasses.replace(config, **dict(zip(keys, combo)))
        result = train_loop(cfg, split, bundle)
        return dict(zip(keys, combo)), result.best_valid_recall20

    workers = int(os.environ.get("MENTOR_THREADS", "1"))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(one_run, combos))
    else:
        results = [one_run(c) for c in combos]

    results.sort(key=lambda r: -r[1])
    with (out_dir / "grid.jsonl").open("w", encoding="utf-8") as fh:
        for params, metric in results:
            fh.write(json.dumps({"params": params, "valid_recall20": metric}) + "\n")
    best_params, best_metric = results[0]
    print(f"best valid R@20={best_metric:.4f} with {best_params}")
    return 0


def cmd_export_embeddings(args) -> int:
    config = _resolved_config(args)
    prepared = Path(args.data_dir)
    ckpt = _require(Path(args.checkpoint), "checkpoint")
    split, bundle = _load_prepared(prepared, config)
    state, _ = load_checkpoint(ckpt)
    out_path = Path(args.out_file)
    modalities = args.modalities.split(",")
    export_embeddings(state, bundle, config, modalities, out_path,
                      sample=args.sample, seed=config.seed)
    print(f"wrote {out_path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mentor")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, out_required=True):
        p.add_argument("--config", default=None)
        p.add_argument("--data-dir", required=True)
        p.add_argument("--out-dir", required=out_required, default=None)
        p.add_argument("--quiet", action="store_true")
        _add_config_flags(p)

    common(sub.add_parser("prepare", help="k-core filter, split, build graph caches"))
    common(sub.add_parser("train", help="train and write the best checkpoint"))

    p_eval = sub.add_parser("evaluate", help="top-K metrics from a checkpoint")
    common(p_eval, out_required=False)
    p_eval.add_argument("--checkpoint", required=True)
    p_eval.add_argument("--target", default="test", choices=("valid", "test"))
    p_eval.add_argument("--per-user", action="store_true")

    p_abl = sub.add_parser("ablate", help="train and compare ablation variants")
    common(p_abl)
    p_abl.add_argument("--variants", default=None,
                       help="comma list from base,L1,L2,L3,full,fg,f,g")
    p_abl.add_argument("--target", default="test", choices=("valid", "test"))

    p_grid = sub.add_parser("grid", help="hyperparameter grid search")
    common(p_grid)
    p_grid.add_argument("--grid", default=None,
                        help='e.g. "tau=0.2,0.5;lambda_f=0,1" (defaults to the full preset)')

    p_exp = sub.add_parser("export-embeddings", help="dump item embeddings as TSV")
    common(p_exp, out_required=False)
    p_exp.add_argument("--checkpoint", required=True)
    p_exp.add_argument("--out-file", required=True)
    p_exp.add_argument("--modalities", default="v,t")
    p_exp.add_argument("--sample", type=int, default=500)

    return parser


COMMANDS = {
    "prepare": cmd_prepare,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "ablate": cmd_ablate,
    "grid": cmd_grid,
    "export-embeddings": cmd_export_embeddings,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    except NumericalError as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
