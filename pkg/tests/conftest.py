"""Shared fixtures and independent reference implementations.

The oracles here deliberately avoid the package's vectorized code paths:
dense_propagate loops over the full user x item grid, and the loss oracles
are scalar Python loops. They exist so the fast implementations have
something independent to be checked against.
"""

from __future__ import annotations

import math
import time

import numpy as np
import pytest

from reviewrec import synth
from reviewrec.config import TrainConfig
from reviewrec.data import Dataset, DatasetSplit, InteractionRecord, split as make_split
from reviewrec.embed import ReviewEmbeddingTable
from reviewrec.graph import build_graph, node_drop
from reviewrec.train import init_params, make_step_batch, step_loss


def make_toy_dataset(pairs, ratings, num_users, num_items, reviews=None,
                     rating_min=1, rating_max=5) -> Dataset:
    """Dataset from explicit (user, item) pairs in edge_id order."""
    records = []
    for k, ((u, i), r) in enumerate(zip(pairs, ratings)):
        text = reviews[k] if reviews is not None else f"review {k}"
        records.append(InteractionRecord(u, i, int(r), text, edge_id=k))
    return Dataset(num_users=num_users, num_items=num_items,
                   rating_min=rating_min, rating_max=rating_max, records=records)


def all_train_split(n_edges: int) -> DatasetSplit:
    empty = np.zeros(0, dtype=np.int64)
    return DatasetSplit(train_edge_ids=np.arange(n_edges, dtype=np.int64),
                        valid_edge_ids=empty, test_edge_ids=empty, seed=0)


def random_instance(seed, num_users, num_items, num_edges, dim, **cfg_kw):
    """Random graph + params + a full-coverage step batch for checks."""
    rng = np.random.Generator(np.random.PCG64(seed))
    pool = [(u, i) for u in range(num_users) for i in range(num_items)]
    take = rng.choice(len(pool), size=num_edges, replace=False)
    pairs = [pool[int(k)] for k in take]
    ratings = rng.integers(1, 6, size=num_edges)
    dataset = make_toy_dataset(pairs, ratings, num_users, num_items)
    table = ReviewEmbeddingTable(
        rows=rng.normal(size=(num_edges, dim)).astype(np.float32), provenance="test"
    )
    cfg = TrainConfig(dim=dim, batch_size=num_edges, seed=seed, **cfg_kw)
    graph = build_graph(dataset, all_train_split(num_edges), table)
    params = init_params(cfg, num_users, num_items, graph.rating_values)
    return dataset, table, cfg, graph, params


def _sigmoid(x: float) -> float:
    return 1.0 / (1.0 + math.exp(-x))


def dense_propagate(graph, params, cfg):
    """Full-adjacency reference for propagate(), looping over every pair."""
    d = cfg.dim
    M, N = graph.num_users, graph.num_items
    edge_at = {}
    for r in graph.rating_values:
        b = graph.buckets[r]
        for u, i, e in zip(b.users, b.items, b.edge_ids):
            edge_at[(int(u), int(i))] = (r, int(e))

    user_cur = params["user_emb"].copy()
    item_cur = params["item_emb"].copy()
    user_outs, item_outs = [], []
    for l in range(1, cfg.layers + 1):
        agg_u = np.zeros((M, d))
        agg_v = np.zeros((N, d))
        for u in range(M):
            for i in range(N):
                if (u, i) not in edge_at:
                    continue
                r, e = edge_at[(u, i)]
                feat = graph.features[e].astype(np.float64)
                norm = 1.0 / math.sqrt(graph.deg_users[u] * graph.deg_items[i])
                w1 = params[f"gate_review_l{l}_r{r}"]
                w2 = params[f"gate_source_l{l}_r{r}"]
                wr = params[f"review_proj_l{l}_r{r}"]
                ws = params[f"source_proj_l{l}_r{r}"]
                review_term = _sigmoid(float(w1 @ feat)) * (wr @ feat)
                g2 = _sigmoid(float(w2 @ feat))
                if cfg.variant == "wo_review":
                    to_user = g2 * (ws @ item_cur[i])
                    to_item = g2 * (ws @ user_cur[u])
                elif cfg.variant == "wo_weight":
                    to_user = review_term + ws @ item_cur[i]
                    to_item = review_term + ws @ user_cur[u]
                else:
                    to_user = review_term + g2 * (ws @ item_cur[i])
                    to_item = review_term + g2 * (ws @ user_cur[u])
                agg_u[u] += to_user * norm
                agg_v[i] += to_item * norm
        if cfg.per_side_agg:
            user_cur = agg_u @ params[f"agg_user_l{l}"].T
            item_cur = agg_v @ params[f"agg_item_l{l}"].T
        else:
            user_cur = agg_u @ params[f"agg_l{l}"].T
            item_cur = agg_v @ params[f"agg_l{l}"].T
        user_outs.append(user_cur)
        item_outs.append(item_cur)
    if cfg.final_embedding == "concat_layers":
        return np.concatenate(user_outs, axis=1), np.concatenate(item_outs, axis=1)
    return user_outs[-1], item_outs[-1]


CLAMP_LO = 1e-12
CLAMP_HI = 1.0 - 1e-12


def _pair_loss_oracle(pos_scores, neg_scores, loss_form):
    n = len(pos_scores)
    total = 0.0
    for s_pos, s_neg in zip(pos_scores, neg_scores):
        f_pos = _sigmoid(float(s_pos))
        f_neg = _sigmoid(float(s_neg))
        if loss_form == "bce":
            total += -math.log(min(max(f_pos, CLAMP_LO), CLAMP_HI))
            total += -math.log(min(max(1.0 - f_neg, CLAMP_LO), CLAMP_HI))
        else:
            total += -math.log(min(max(f_pos, CLAMP_LO), CLAMP_HI))
            total += math.log(min(max(f_neg, CLAMP_LO), CLAMP_HI))
    return total / n


def nd_loss_oracle(u1, u2, v1, v2, user_anchors, user_negs, item_anchors,
                   item_negs, w_user, w_item, loss_form):
    total = 0.0
    for view1, view2, anchors, negs, w in (
        (u1, u2, user_anchors, user_negs, w_user),
        (v1, v2, item_anchors, item_negs, w_item),
    ):
        if len(anchors) == 0:
            continue
        pos = [view1[a] @ w @ view2[a] for a in anchors]
        neg = [view1[a] @ w @ view2[n] for a, n in zip(anchors, negs)]
        total += _pair_loss_oracle(pos, neg, loss_form)
    return total


def ed_loss_oracle(features, pos_reviews, neg_reviews, w, loss_form):
    pos = [h @ w @ e for h, e in zip(features, pos_reviews)]
    neg = [h @ w @ e for h, e in zip(features, neg_reviews)]
    return _pair_loss_oracle(pos, neg, loss_form)


def fd_gradient_check(graph, aug, batch, params, cfg, step=1e-5):
    """Max relative error between analytic gradients and central differences.

    Relative error uses denominator max(|analytic| + |numeric|, 1e-4); the
    floor keeps finite-difference noise (~1e-10 absolute at this step size)
    from dominating entries whose true gradient is tiny.
    """
    _, grads = step_loss(graph, aug, batch, params, cfg, need_grads=True)
    worst = 0.0
    worst_name = ""
    for name, values in params.items():
        flat = values.reshape(-1)
        g = grads[name].reshape(-1)
        for idx in range(flat.size):
            orig = flat[idx]
            flat[idx] = orig + step
            up, _ = step_loss(graph, aug, batch, params, cfg, need_grads=False)
            flat[idx] = orig - step
            down, _ = step_loss(graph, aug, batch, params, cfg, need_grads=False)
            flat[idx] = orig
            numeric = (up["total"] - down["total"]) / (2.0 * step)
            rel = abs(g[idx] - numeric) / max(1e-4, abs(g[idx]) + abs(numeric))
            if rel > worst:
                worst, worst_name = rel, f"{name}[{idx}]"
    return worst, worst_name


def gradcheck_instance(seed=3, **cfg_kw):
    """The standard tiny instance used by the gradient checks."""
    defaults = dict(alpha=0.5, beta=0.5, keep_prob_users=0.8, keep_prob_items=0.8)
    defaults.update(cfg_kw)
    _, _, cfg, graph, params = random_instance(seed, 3, 3, 6, 4, **defaults)
    aug = node_drop(graph, cfg.keep_prob_users, cfg.keep_prob_items, seed=seed + 77)
    rng = np.random.Generator(np.random.PCG64(seed + 5))
    batch = make_step_batch(graph.edge_arrays(), np.arange(6), cfg, 3, 3, rng)
    return graph, aug, batch, params, cfg


SYNTH_CFG = dict(dim=16, batch_size=160, learning_rate=0.025,
                 max_epochs=50, patience=15)
SYNTH_RGCL = dict(alpha=0.1, beta=0.005, keep_prob_users=0.95, keep_prob_items=0.95)
SYNTH_SEEDS = (0, 1, 2, 3, 4)


@pytest.fixture(scope="session")
def synth_bundle():
    """The planted synthetic dataset shared by the learning tests."""
    dataset, raw = synth.make_synthetic(seed=11)
    sp = make_split(dataset, seed=7)
    table = synth.whiten_features(raw, sp, feature_dim=16)
    baseline = synth.global_mean_baseline(dataset, sp)
    graph = build_graph(dataset, sp, table)
    return {"dataset": dataset, "split": sp, "table": table,
            "baseline": baseline, "graph": graph}


def _train_seeds(bundle, seeds, **cfg_kw):
    from reviewrec.evaluate import evaluate_edges
    from reviewrec.train import train_loop

    runs = []
    for seed in seeds:
        cfg = TrainConfig(seed=seed, **SYNTH_CFG, **cfg_kw)
        result = train_loop(bundle["dataset"], bundle["split"], bundle["table"], cfg)
        test = evaluate_edges(bundle["graph"], bundle["dataset"], result.params,
                              cfg, bundle["split"].test_edge_ids)
        runs.append({"seed": seed, "test_mse": test.mse, "result": result})
    return runs


@pytest.fixture(scope="session")
def synth_rgcl_runs(synth_bundle):
    """Five full-model seeds on the synthetic dataset, with wall time."""
    started = time.monotonic()
    runs = _train_seeds(synth_bundle, SYNTH_SEEDS, **SYNTH_RGCL)
    elapsed = time.monotonic() - started
    return {"runs": runs, "elapsed": elapsed}


@pytest.fixture(scope="session")
def synth_rg_runs(synth_bundle):
    """Five rating-prediction-only seeds (alpha = beta = 0) for comparison."""
    runs = _train_seeds(synth_bundle, SYNTH_SEEDS, alpha=0.0, beta=0.0)
    return {"runs": runs}
