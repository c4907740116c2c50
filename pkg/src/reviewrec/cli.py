"""Command-line interface.

Verbs: prepare, embed, train, evaluate, sparsity-report, ablate, sweep.
Global flags --seed, --threads, --deterministic apply across verbs; --threads
caps the numeric thread pools and must take effect before numpy loads, so
verb handlers import the heavy modules lazily.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path


def _set_threads(n: int) -> None:
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS",
                "NUMEXPR_NUM_THREADS"):
        os.environ[var] = str(n)


def _load_dataset_split_table(args):
    from .data import read_canonical, read_split
    from .embed import read_table

    dataset = read_canonical(args.canonical)
    sp = read_split(args.split)
    table = read_table(args.embeddings)
    if table.row_count != dataset.num_edges:
        raise SystemExit(
            f"embedding table rows ({table.row_count}) != dataset edges ({dataset.num_edges})"
        )
    return dataset, sp, table


def _load_config(args):
    from .config import TrainConfig, read_config

    cfg = read_config(args.config) if args.config else TrainConfig()
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.deterministic:
        overrides["deterministic"] = True
    return cfg.with_overrides(**overrides) if overrides else cfg.validate()


def _parse_fractions(text: str):
    parts = [float(p) for p in text.split(",")]
    if len(parts) != 3:
        raise SystemExit(f"--fractions expects three comma-separated values, got {text!r}")
    return tuple(parts)


def cmd_prepare(args) -> int:
    from .data import ingest, split, write_canonical, write_split

    dataset = ingest(args.input, min_core=args.min_core)
    write_canonical(dataset, args.canonical)
    seed = args.seed if args.seed is not None else 0
    sp = split(dataset, fractions=_parse_fractions(args.fractions), seed=seed)
    write_split(sp, args.split_out)
    print(f"prepared {dataset.num_users} users, {dataset.num_items} items, "
          f"{dataset.num_edges} edges")
    print(f"split: {len(sp.train_edge_ids)} train, {len(sp.valid_edge_ids)} valid, "
          f"{len(sp.test_edge_ids)} test (seed {seed})")
    return 0


def cmd_embed(args) -> int:
    from .data import read_canonical, read_split
    from .embed import build_embedding_table, write_table

    dataset = read_canonical(args.canonical)
    sp = read_split(args.split)
    table = build_embedding_table(
        dataset, sp, mode=args.mode, dim=args.dim, raw_dim=args.raw_dim,
        import_path=args.import_path, canonical_path=args.canonical,
    )
    write_table(table.rows, args.out)
    print(f"wrote {table.row_count} x {table.dim} review features ({args.mode}) to {args.out}")
    return 0


def cmd_train(args) -> int:
    from .train import DivergenceError, train_loop

    dataset, sp, table = _load_dataset_split_table(args)
    cfg = _load_config(args)
    try:
        result = train_loop(dataset, sp, table, cfg, out_dir=args.out)
    except DivergenceError as exc:
        raise SystemExit(f"training diverged: {exc}")
    print(f"best validation MSE {result.best_valid_mse:.6f} at epoch "
          f"{result.best_epoch} ({result.epochs_run} epochs run)")
    print(f"checkpoint: {result.checkpoint_path}")
    print(f"trace: {result.trace_path}")
    return 0


def cmd_evaluate(args) -> int:
    from dataclasses import asdict

    from .evaluate import STD_CONVENTION, evaluate_edges, sparsity_report, write_metrics
    from .graph import build_graph
    from .model import read_checkpoint

    import numpy as np

    dataset, sp, table = _load_dataset_split_table(args)
    params, cfg = read_checkpoint(args.checkpoint)
    if args.deterministic:
        cfg = cfg.with_overrides(deterministic=True)
    edge_ids = {"valid": sp.valid_edge_ids, "test": sp.test_edge_ids}[args.which]
    graph = build_graph(dataset, sp, table, dtype=np.dtype(cfg.dtype))
    result = evaluate_edges(graph, dataset, params, cfg, edge_ids)
    groups = sparsity_report(graph, dataset, params, cfg, sp.test_edge_ids)
    report = {
        "test_mse": result.mse,
        "test_mse_std": 0.0,
        "std_convention": STD_CONVENTION,
        "which": args.which,
        "count": result.count,
        "cold_count": result.cold_count,
        "seeds": [cfg.seed],
        "per_group_mse": [g.mse for g in groups if g.group != "cold"],
        "groups": [asdict(g) for g in groups],
        "runtime_seconds": 0.0,
        "config": asdict(cfg),
    }
    if args.out:
        write_metrics(report, args.out)
        print(f"wrote metrics to {args.out}")
    print(f"{args.which} MSE {result.mse:.6f} over {result.count} edges "
          f"({result.cold_count} cold)")
    return 0


def cmd_sparsity_report(args) -> int:
    from dataclasses import asdict

    from .evaluate import sparsity_report
    from .graph import build_graph
    from .model import read_checkpoint

    import numpy as np

    dataset, sp, table = _load_dataset_split_table(args)
    params, cfg = read_checkpoint(args.checkpoint)
    graph = build_graph(dataset, sp, table, dtype=np.dtype(cfg.dtype))
    groups = sparsity_report(graph, dataset, params, cfg, sp.test_edge_ids)
    for g in groups:
        mse = "n/a" if g.mse is None else f"{g.mse:.6f}"
        print(f"group {g.group}: {g.user_count} users, mean train count "
              f"{g.mean_train_count:.2f}, {g.test_count} test edges, MSE {mse}")
    if args.out:
        Path(args.out).write_text(
            json.dumps([asdict(g) for g in groups], indent=2) + "\n", encoding="utf-8"
        )
        print(f"wrote report to {args.out}")
    return 0


def _parse_seeds(text: str) -> list[int]:
    return [int(s) for s in text.split(",")]


def cmd_ablate(args) -> int:
    from .evaluate import ablate

    dataset, sp, table = _load_dataset_split_table(args)
    cfg = _load_config(args)
    variants = args.variants.split(",")
    rows = ablate(dataset, sp, table, cfg, variants, _parse_seeds(args.seeds),
                  out_dir=args.out)
    for name, report in rows.items():
        print(f"{name}: test MSE {report['test_mse']:.6f} "
              f"(+/- {report['test_mse_std']:.6f}, {len(report['seeds'])} seeds)")
    return 0


def cmd_sweep(args) -> int:
    from .evaluate import sweep

    dataset, sp, table = _load_dataset_split_table(args)
    cfg = _load_config(args)
    alphas = [float(a) for a in args.alphas.split(",")]
    betas = [float(b) for b in args.betas.split(",")]
    rows = sweep(dataset, sp, table, cfg, alphas, betas, _parse_seeds(args.seeds),
                 out_csv=args.out)
    print(f"wrote {len(rows)} rows to {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="reviewrec",
        description="Review-aware graph contrastive rating prediction",
    )
    parser.add_argument("--seed", type=int, default=None, help="override the run seed")
    parser.add_argument("--threads", type=int, default=None,
                        help="cap numeric thread pools")
    parser.add_argument("--deterministic", action="store_true",
                        help="single-threaded, wall-clock fields zeroed")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("prepare", help="ingest raw JSON-lines reviews into the canonical format")
    p.add_argument("--input", required=True)
    p.add_argument("--canonical", required=True)
    p.add_argument("--split-out", required=True)
    p.add_argument("--min-core", type=int, default=5)
    p.add_argument("--fractions", default="0.8,0.1,0.1")
    p.set_defaults(func=cmd_prepare)

    p = sub.add_parser("embed", help="build the frozen review feature table")
    p.add_argument("--canonical", required=True)
    p.add_argument("--split", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--mode", choices=("hashed", "import"), default="hashed")
    p.add_argument("--dim", type=int, default=64)
    p.add_argument("--raw-dim", type=int, default=512)
    p.add_argument("--import-path", default=None,
                   help="raw embedding file for --mode import")
    p.set_defaults(func=cmd_embed)

    p = sub.add_parser("train", help="train and checkpoint the best model")
    p.add_argument("--canonical", required=True)
    p.add_argument("--split", required=True)
    p.add_argument("--embeddings", required=True)
    p.add_argument("--config", default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="held-out MSE of a checkpoint")
    p.add_argument("--canonical", required=True)
    p.add_argument("--split", required=True)
    p.add_argument("--embeddings", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--which", choices=("valid", "test"), default="test")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("sparsity-report", help="per-user-group test MSE")
    p.add_argument("--canonical", required=True)
    p.add_argument("--split", required=True)
    p.add_argument("--embeddings", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_sparsity_report)

    p = sub.add_parser("ablate", help="train and compare model variants")
    p.add_argument("--canonical", required=True)
    p.add_argument("--split", required=True)
    p.add_argument("--embeddings", required=True)
    p.add_argument("--config", default=None)
    p.add_argument("--variants", default="base,ed,nd,full")
    p.add_argument("--seeds", default="0")
    p.add_argument("--out", default=None,
                   help="directory for per-variant runs and the summary csv")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("sweep", help="test MSE over an alpha/beta grid")
    p.add_argument("--canonical", required=True)
    p.add_argument("--split", required=True)
    p.add_argument("--embeddings", required=True)
    p.add_argument("--config", default=None)
    p.add_argument("--alphas", default="0.2,0.4,0.6,0.8,1.0,2.0")
    p.add_argument("--betas", default="0.2,0.4,0.6,0.8,1.0")
    p.add_argument("--seeds", default="0")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_sweep)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.deterministic:
        _set_threads(1)
    elif args.threads is not None:
        _set_threads(args.threads)
    try:
        return args.func(args)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
