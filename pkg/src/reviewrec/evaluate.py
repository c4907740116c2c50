"""Held-out MSE, the user-sparsity breakdown, ablation and sweep drivers,
and multi-seed aggregation into metrics files.

Cold edges (user or item absent from training) are predicted from zero
embeddings, included in the overall MSE, and counted separately. The
sparsity report groups users by training-interaction count; users absent
from training go to a sixth "cold" bucket keyed by the edge's user.
"""

from __future__ import annotations

import json
import time
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import model
from .config import TrainConfig
from .data import Dataset, DatasetSplit
from .embed import ReviewEmbeddingTable
from .graph import ReviewGraph, build_graph
from .train import TrainResult, _edge_triples, predict_pairs, train_loop

STD_CONVENTION = "sample (ddof=1); 0.0 when only one seed"


@dataclass
class EvalResult:
    mse: float
    count: int
    cold_count: int          # edges with an unseen user or item
    squared_errors: np.ndarray
    users: np.ndarray
    items: np.ndarray


def evaluate_edges(
    graph: ReviewGraph,
    dataset: Dataset,
    params: model.Params,
    cfg: TrainConfig,
    edge_ids: np.ndarray,
) -> EvalResult:
    """MSE over the given held-out edges, predicting on the training graph."""
    if len(edge_ids) == 0:
        raise ValueError("evaluation set is empty")
    users, items, ratings = _edge_triples(dataset, edge_ids)
    preds = predict_pairs(graph, params, cfg, users, items)
    if cfg.clamp_eval:
        preds = np.clip(preds, dataset.rating_min, dataset.rating_max)
    sq = (np.asarray(preds, dtype=np.float64) - ratings) ** 2
    cold = (graph.deg_users[users] == 0) | (graph.deg_items[items] == 0)
    return EvalResult(
        mse=float(sq.mean()), count=len(sq), cold_count=int(cold.sum()),
        squared_errors=sq, users=users, items=items,
    )


def evaluate_split(
    dataset: Dataset,
    split: DatasetSplit,
    table: ReviewEmbeddingTable,
    params: model.Params,
    cfg: TrainConfig,
    which: str = "test",
) -> EvalResult:
    ids = {"valid": split.valid_edge_ids, "test": split.test_edge_ids,
           "train": split.train_edge_ids}.get(which)
    if ids is None:
        raise ValueError(f"which must be valid, test or train, got {which!r}")
    graph = build_graph(dataset, split, table, dtype=np.dtype(cfg.dtype))
    return evaluate_edges(graph, dataset, params, cfg, ids)


@dataclass
class GroupStat:
    group: str               # "1".."5" sparsest to densest, or "cold"
    user_count: int
    mean_train_count: float  # group density proxy
    user_share: float        # fraction of grouped users
    test_count: int
    mse: float | None        # None when the group has no test edges


def sparsity_groups(deg_users: np.ndarray) -> list[np.ndarray]:
    """Five user groups ranked ascending by training-interaction count.

    Equal-size groups of floor(n/5); remainder users join the densest (last)
    group. Ties in count break by user index ascending. Only users with at
    least one training interaction participate.
    """
    trained = np.flatnonzero(deg_users > 0)
    if len(trained) < 5:
        raise ValueError(f"need at least 5 trained users for the sparsity report, have {len(trained)}")
    order = trained[np.lexsort((trained, deg_users[trained]))]
    size = len(order) // 5
    groups = [order[i * size : (i + 1) * size] for i in range(4)]
    groups.append(order[4 * size :])
    return groups


def sparsity_report(
    graph: ReviewGraph,
    dataset: Dataset,
    params: model.Params,
    cfg: TrainConfig,
    test_edge_ids: np.ndarray,
) -> list[GroupStat]:
    """Per-group test MSE over the five sparsity groups plus a cold bucket.

    Weighted by test counts, the group MSEs recombine exactly to the overall
    test MSE.
    """
    result = evaluate_edges(graph, dataset, params, cfg, test_edge_ids)
    groups = sparsity_groups(graph.deg_users)
    n_grouped = sum(len(g) for g in groups)

    group_of_user = np.full(graph.num_users, -1, dtype=np.int64)
    for gi, members in enumerate(groups):
        group_of_user[members] = gi

    stats: list[GroupStat] = []
    edge_groups = group_of_user[result.users]
    for gi, members in enumerate(groups):
        mask = edge_groups == gi
        n_test = int(mask.sum())
        stats.append(GroupStat(
            group=str(gi + 1),
            user_count=len(members),
            mean_train_count=float(graph.deg_users[members].mean()),
            user_share=len(members) / n_grouped,
            test_count=n_test,
            mse=float(result.squared_errors[mask].mean()) if n_test else None,
        ))
    cold_mask = edge_groups == -1
    n_cold = int(cold_mask.sum())
    if n_cold:
        stats.append(GroupStat(
            group="cold",
            user_count=int(np.sum((graph.deg_users == 0)[np.unique(result.users[cold_mask])])),
            mean_train_count=0.0,
            user_share=0.0,
            test_count=n_cold,
            mse=float(result.squared_errors[cold_mask].mean()),
        ))
    return stats


@dataclass
class SeedRun:
    seed: int
    test_mse: float
    valid_mse: float
    best_epoch: int
    epochs_run: int
    cold_count: int
    group_mses: list[float | None]
    runtime_seconds: float


def run_seed(
    dataset: Dataset,
    split: DatasetSplit,
    table: ReviewEmbeddingTable,
    cfg: TrainConfig,
    out_dir: str | Path | None = None,
) -> tuple[SeedRun, TrainResult]:
    """Train one seed and evaluate its best checkpoint on the test split."""
    started = time.monotonic()
    result = train_loop(dataset, split, table, cfg, out_dir=out_dir)
    graph = build_graph(dataset, split, table, dtype=np.dtype(cfg.dtype))
    test = evaluate_edges(graph, dataset, result.params, cfg, split.test_edge_ids)
    groups = sparsity_report(graph, dataset, result.params, cfg, split.test_edge_ids)
    elapsed = 0.0 if cfg.deterministic else time.monotonic() - started
    run = SeedRun(
        seed=cfg.seed,
        test_mse=test.mse,
        valid_mse=result.best_valid_mse,
        best_epoch=result.best_epoch,
        epochs_run=result.epochs_run,
        cold_count=test.cold_count,
        group_mses=[g.mse for g in groups if g.group != "cold"],
        runtime_seconds=elapsed,
    )
    return run, result


def aggregate_runs(runs: list[SeedRun], cfg: TrainConfig) -> dict:
    """MetricsReport as a JSON-ready dict: mean/std across seeds plus echo."""
    if not runs:
        raise ValueError("no runs to aggregate")
    mses = np.array([r.test_mse for r in runs], dtype=np.float64)
    group_cols = []
    n_groups = len(runs[0].group_mses)
    for gi in range(n_groups):
        vals = [r.group_mses[gi] for r in runs if r.group_mses[gi] is not None]
        group_cols.append(float(np.mean(vals)) if vals else None)
    return {
        "test_mse": float(mses.mean()),
        "test_mse_std": float(mses.std(ddof=1)) if len(mses) > 1 else 0.0,
        "std_convention": STD_CONVENTION,
        "seeds": [r.seed for r in runs],
        "per_seed": [asdict(r) for r in runs],
        "per_group_mse": group_cols,
        "cold_count": int(sum(r.cold_count for r in runs) // len(runs)),
        "runtime_seconds": float(sum(r.runtime_seconds for r in runs)),
        "config": asdict(cfg),
    }


def write_metrics(report: dict, path: str | Path) -> None:
    Path(path).write_text(
        json.dumps(report, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )


ABLATION_PRESETS: dict[str, dict] = {
    "base": {"alpha": 0.0, "beta": 0.0},        # rating prediction only
    "ed": {"beta": 0.0},                        # + edge discrimination
    "nd": {"alpha": 0.0},                       # + node discrimination
    "full": {},                                 # both contrastive tasks
    "wo_review": {"variant": "wo_review"},
    "wo_weight": {"variant": "wo_weight"},
    "l1": {"layers": 1},
    "l2": {"layers": 2},
    "l3": {"layers": 3},
}


def ablate(
    dataset: Dataset,
    split: DatasetSplit,
    table: ReviewEmbeddingTable,
    base_cfg: TrainConfig,
    variants: list[str],
    seeds: list[int],
    out_dir: str | Path | None = None,
) -> dict[str, dict]:
    """Train every (variant, seed) pair and aggregate one report per variant."""
    out = Path(out_dir) if out_dir is not None else None
    table_rows: dict[str, dict] = {}
    for name in variants:
        if name not in ABLATION_PRESETS:
            raise ValueError(f"unknown ablation variant {name!r}; "
                             f"choose from {sorted(ABLATION_PRESETS)}")
        runs = []
        for seed in seeds:
            cfg = base_cfg.with_overrides(seed=seed, **ABLATION_PRESETS[name])
            run_dir = out / name / f"seed{seed}" if out is not None else None
            run, _ = run_seed(dataset, split, table, cfg, out_dir=run_dir)
            runs.append(run)
        report = aggregate_runs(runs, base_cfg.with_overrides(**ABLATION_PRESETS[name]))
        table_rows[name] = report
        if out is not None:
            write_metrics(report, out / f"{name}.json")
    if out is not None:
        _write_ablation_csv(table_rows, out / "ablation.csv")
    return table_rows


def _write_ablation_csv(rows: dict[str, dict], path: Path) -> None:
    lines = ["variant,test_mse,test_mse_std,seeds"]
    for name, report in rows.items():
        lines.append(
            f"{name},{report['test_mse']:.17g},{report['test_mse_std']:.17g},"
            f"{len(report['seeds'])}"
        )
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def sweep(
    dataset: Dataset,
    split: DatasetSplit,
    table: ReviewEmbeddingTable,
    base_cfg: TrainConfig,
    alphas: list[float],
    betas: list[float],
    seeds: list[int],
    out_csv: str | Path,
) -> list[tuple[float, float, int, float]]:
    """Test MSE over the alpha x beta x seed cross product, one CSV row each."""
    rows = []
    for alpha in alphas:
        for beta in betas:
            for seed in seeds:
                cfg = base_cfg.with_overrides(alpha=alpha, beta=beta, seed=seed)
                run, _ = run_seed(dataset, split, table, cfg)
                rows.append((alpha, beta, seed, run.test_mse))
    lines = ["alpha,beta,seed,test_mse"]
    for alpha, beta, seed, mse in rows:
        lines.append(f"{alpha},{beta},{seed},{mse:.17g}")
    Path(out_csv).write_text("\n".join(lines) + "\n", encoding="utf-8")
    return rows
