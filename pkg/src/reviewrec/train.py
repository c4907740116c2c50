"""Joint optimization: Xavier initialization, exact gradients of the joint
objective, bias-corrected Adam, the per-epoch augmentation and minibatch
schedule, early stopping on validation MSE, and atomic checkpointing.

Schedule: each epoch draws one node-dropped subgraph pair (seeded by the run
seed and the epoch), then iterates shuffled minibatches of training edges.
Every step runs full propagation on the training graph for the supervised
and edge-discrimination terms and on both subgraphs for node discrimination.
Contrastive code paths are skipped entirely (no PRNG draws, no propagation)
when their weight is zero, so an alpha=beta=0 run is bit-identical to the
plain rating-prediction model.

Per-step PRNG draw order when both terms are active: edge-discrimination
negatives, then node-discrimination user negatives, then item negatives.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import losses, model
from .config import TrainConfig
from .data import Dataset, DatasetSplit
from .graph import AugmentedGraphPair, ReviewGraph, build_graph, node_drop
from .model import Params


class DivergenceError(RuntimeError):
    """Raised when validation MSE exceeds 10x its initial value."""


def _stream(*key: int) -> np.random.Generator:
    """Independent deterministic generator for a (seed, epoch, purpose) key."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(list(key))))


def init_params(
    cfg: TrainConfig,
    num_users: int,
    num_items: int,
    rating_values: list[int],
    rng: np.random.Generator | None = None,
) -> Params:
    """Xavier-uniform weights, zero biases, deterministic given cfg.seed.

    Matrices use bound sqrt(6 / (fan_in + fan_out)) with (rows, cols) =
    (fan_out, fan_in); vectors of length n use fan_in = n, fan_out = 1.
    """
    if rng is None:
        rng = _stream(cfg.seed, 0)
    dtype = np.dtype(cfg.dtype)
    params: Params = {}
    for name, shape, kind in model.param_spec(cfg, num_users, num_items, rating_values):
        if kind == "zeros":
            params[name] = np.zeros(shape, dtype=dtype)
            continue
        if len(shape) == 2:
            fan_out, fan_in = shape
        else:
            fan_out, fan_in = 1, shape[0]
        bound = math.sqrt(6.0 / (fan_in + fan_out))
        params[name] = rng.uniform(-bound, bound, size=shape).astype(dtype)
    return params


@dataclass
class StepBatch:
    """One minibatch of training edges plus every sampled negative it needs,
    so a loss evaluation is a pure function of (params, graph, aug, batch)."""

    users: np.ndarray
    items: np.ndarray
    ratings: np.ndarray
    edge_ids: np.ndarray
    neg_edge_ids: np.ndarray | None = None   # edge-discrimination negatives
    user_anchors: np.ndarray | None = None   # node discrimination, user side
    user_negatives: np.ndarray | None = None
    item_anchors: np.ndarray | None = None
    item_negatives: np.ndarray | None = None

    def __len__(self) -> int:
        return len(self.edge_ids)


def _draw_distinct(rng: np.random.Generator, pool: np.ndarray, taken: np.ndarray) -> np.ndarray:
    """Uniform draws from pool; any draw equal to its `taken` partner is redrawn."""
    if len(pool) < 2:
        raise ValueError("need at least two candidates to draw a distinct negative")
    draws = pool[rng.integers(0, len(pool), size=len(taken))]
    while True:
        clash = draws == taken
        n_clash = int(clash.sum())
        if n_clash == 0:
            return draws
        draws[clash] = pool[rng.integers(0, len(pool), size=n_clash)]


def make_step_batch(
    train_edges: tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray],
    take: np.ndarray,
    cfg: TrainConfig,
    num_users: int,
    num_items: int,
    rng: np.random.Generator,
) -> StepBatch:
    """Slice a minibatch out of the training edge arrays and draw negatives.

    ED negatives are other training edges (uniform over the training set);
    ND anchors are the batch's sorted unique users/items with negatives drawn
    uniformly over all nodes of the side, resampled until distinct.
    """
    users, items, ratings, eids = (a[take] for a in train_edges)
    batch = StepBatch(users=users, items=items, ratings=ratings, edge_ids=eids)
    if cfg.alpha > 0:
        batch.neg_edge_ids = _draw_distinct(rng, train_edges[3], eids)
    if cfg.beta > 0:
        batch.user_anchors = np.unique(users)
        batch.user_negatives = _draw_distinct(
            rng, np.arange(num_users, dtype=np.int64), batch.user_anchors
        )
        batch.item_anchors = np.unique(items)
        batch.item_negatives = _draw_distinct(
            rng, np.arange(num_items, dtype=np.int64), batch.item_anchors
        )
    return batch


def step_loss(
    graph: ReviewGraph,
    aug: AugmentedGraphPair | None,
    batch: StepBatch,
    params: Params,
    cfg: TrainConfig,
    need_grads: bool = True,
) -> tuple[dict[str, float], Params | None]:
    """Joint loss on one batch and, optionally, its exact gradients.

    Returns ({"mse", "ed", "nd", "total"}, grads). The reported ed/nd values
    are unweighted; "total" applies alpha and beta. With need_grads=False the
    same forward runs without any gradient work (used by finite-difference
    checks and diagnostics).
    """
    grads = model.zero_grads(params) if need_grads else None
    dtype = params["user_emb"].dtype

    prop = model.propagate(graph, params, cfg)
    mlp = model.interaction_features(
        prop.user_final[batch.users], prop.item_final[batch.items], params
    )
    preds = model.predict_batch(mlp.features, params, batch.users, batch.items)
    l1 = losses.mse_loss(preds, batch.ratings)

    l2 = 0.0
    d_feat_ed = None
    if cfg.alpha > 0:
        pos = graph.features[batch.edge_ids].astype(dtype, copy=False)
        neg = graph.features[batch.neg_edge_ids].astype(dtype, copy=False)
        l2, d_feat_ed = losses.ed_loss(
            mlp.features, pos, neg, params, cfg.loss_form, scale=cfg.alpha, grads=grads
        )

    l3 = 0.0
    nd_state = None
    if cfg.beta > 0:
        prop1 = model.propagate(aug.sub1, params, cfg)
        prop2 = model.propagate(aug.sub2, params, cfg)
        if need_grads:
            d_view1 = (np.zeros_like(prop1.user_final), np.zeros_like(prop1.item_final))
            d_view2 = (np.zeros_like(prop2.user_final), np.zeros_like(prop2.item_final))
        else:
            d_view1 = d_view2 = None
        l3 = losses.nd_loss(
            prop1.user_final, prop2.user_final, prop1.item_final, prop2.item_final,
            batch.user_anchors, batch.user_negatives,
            batch.item_anchors, batch.item_negatives,
            params, cfg.loss_form, scale=cfg.beta, grads=grads,
            d_view1=d_view1, d_view2=d_view2,
        )
        nd_state = (prop1, prop2, d_view1, d_view2)

    metrics = {
        "mse": l1,
        "ed": l2,
        "nd": l3,
        "total": losses.total_loss(l1, l2, l3, cfg.alpha, cfg.beta),
    }
    if not need_grads:
        return metrics, None

    d_preds = losses.mse_grad(preds, batch.ratings).astype(dtype)
    grads["predict_w"] += mlp.features.T @ d_preds
    if "bias_global" in params:
        grads["bias_global"] += d_preds.sum()
        np.add.at(grads["bias_user"], batch.users, d_preds)
        np.add.at(grads["bias_item"], batch.items, d_preds)
    d_features = d_preds[:, None] * params["predict_w"][None, :]
    if d_feat_ed is not None:
        d_features = d_features + d_feat_ed

    d_user_vecs, d_item_vecs = model.interaction_backward(params, mlp, d_features, grads)
    d_user_final = np.zeros_like(prop.user_final)
    d_item_final = np.zeros_like(prop.item_final)
    np.add.at(d_user_final, batch.users, d_user_vecs)
    np.add.at(d_item_final, batch.items, d_item_vecs)
    model.propagate_backward(graph, params, cfg, prop, d_user_final, d_item_final, grads)

    if nd_state is not None:
        prop1, prop2, d_view1, d_view2 = nd_state
        model.propagate_backward(aug.sub1, params, cfg, prop1, d_view1[0], d_view1[1], grads)
        model.propagate_backward(aug.sub2, params, cfg, prop2, d_view2[0], d_view2[1], grads)

    if cfg.weight_decay > 0:
        for name in grads:
            grads[name] += cfg.weight_decay * params[name]
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise ValueError(f"non-finite gradient in {name}")
    return metrics, grads


@dataclass
class AdamState:
    first: Params
    second: Params
    step: int = 0


def init_adam(params: Params) -> AdamState:
    return AdamState(first=model.zero_grads(params), second=model.zero_grads(params))


def adam_step(params: Params, grads: Params, state: AdamState, cfg: TrainConfig) -> None:
    """Standard bias-corrected Adam update, in place."""
    state.step += 1
    t = state.step
    b1, b2 = cfg.adam_beta1, cfg.adam_beta2
    corr1 = 1.0 - b1**t
    corr2 = 1.0 - b2**t
    for name, g in grads.items():
        m = state.first[name]
        v = state.second[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        params[name] -= cfg.learning_rate * (m / corr1) / (np.sqrt(v / corr2) + cfg.adam_eps)


def predict_pairs(
    graph: ReviewGraph, params: Params, cfg: TrainConfig,
    users: np.ndarray, items: np.ndarray,
) -> np.ndarray:
    """Propagate on the training graph and predict the given (user, item) pairs."""
    prop = model.propagate(graph, params, cfg)
    mlp = model.interaction_features(prop.user_final[users], prop.item_final[items], params)
    return model.predict_batch(mlp.features, params, users, items)


def _edge_triples(dataset: Dataset, edge_ids: np.ndarray):
    users = np.array([dataset.records[int(e)].user_idx for e in edge_ids], dtype=np.int64)
    items = np.array([dataset.records[int(e)].item_idx for e in edge_ids], dtype=np.int64)
    ratings = np.array([dataset.records[int(e)].rating for e in edge_ids], dtype=np.float64)
    return users, items, ratings


def _holdout_mse(
    graph: ReviewGraph, params: Params, cfg: TrainConfig,
    users: np.ndarray, items: np.ndarray, ratings: np.ndarray,
    rating_min: int, rating_max: int,
) -> float:
    preds = predict_pairs(graph, params, cfg, users, items)
    if cfg.clamp_eval:
        preds = np.clip(preds, rating_min, rating_max)
    return losses.mse_loss(preds, ratings)


@dataclass
class EpochRow:
    epoch: int
    train_mse: float
    train_ed: float
    train_nd: float
    valid_mse: float


TRACE_HEADER = "epoch,train_mse,train_ed,train_nd,valid_mse"


def write_trace(rows: list[EpochRow], path: str | Path) -> None:
    lines = [TRACE_HEADER]
    for r in rows:
        lines.append(
            f"{r.epoch},{r.train_mse:.17g},{r.train_ed:.17g},{r.train_nd:.17g},{r.valid_mse:.17g}"
        )
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_trace(path: str | Path) -> list[EpochRow]:
    lines = Path(path).read_text(encoding="utf-8").strip().splitlines()
    if not lines or lines[0] != TRACE_HEADER:
        raise ValueError(f"{path}: not a loss trace file")
    rows = []
    for line in lines[1:]:
        epoch, mse, ed, nd, valid = line.split(",")
        rows.append(EpochRow(int(epoch), float(mse), float(ed), float(nd), float(valid)))
    return rows


@dataclass
class TrainResult:
    params: Params
    config: TrainConfig
    trace: list[EpochRow]
    best_epoch: int
    best_valid_mse: float
    epochs_run: int
    stopped_early: bool
    checkpoint_path: Path | None = None
    trace_path: Path | None = None


def train_loop(
    dataset: Dataset,
    split: DatasetSplit,
    table,
    cfg: TrainConfig,
    out_dir: str | Path | None = None,
) -> TrainResult:
    """Run the full schedule and keep the best-validation checkpoint.

    Persists `model.ckpt` (atomically, on every improvement) and `trace.csv`
    under out_dir when given. Raises DivergenceError when validation MSE
    exceeds 10x its first-epoch value.
    """
    cfg.validate()
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)

    graph = build_graph(dataset, split, table, dtype=np.dtype(cfg.dtype))
    train_edges = graph.edge_arrays()
    n_train = len(train_edges[0])
    if n_train == 0:
        raise ValueError("training split is empty")
    valid_users, valid_items, valid_ratings = _edge_triples(dataset, split.valid_edge_ids)
    if len(valid_users) == 0:
        raise ValueError("validation split is empty")

    params = init_params(cfg, graph.num_users, graph.num_items, graph.rating_values)
    state = init_adam(params)

    trace: list[EpochRow] = []
    best_params: Params | None = None
    best_valid = np.inf
    best_epoch = 0
    initial_valid = None
    bad_epochs = 0
    stopped_early = False
    ckpt_path = out / "model.ckpt" if out is not None else None
    trace_path = out / "trace.csv" if out is not None else None

    epoch = 0
    for epoch in range(1, cfg.max_epochs + 1):
        aug = None
        if cfg.beta > 0 and not cfg.resample_aug_per_batch:
            aug = node_drop(
                graph, cfg.keep_prob_users, cfg.keep_prob_items,
                seed=int(_stream(cfg.seed, epoch, 2).integers(0, 2**63)),
            )
        shuffle_rng = _stream(cfg.seed, epoch, 1)
        neg_rng = _stream(cfg.seed, epoch, 3)
        perm = shuffle_rng.permutation(n_train)

        sums = {"mse": 0.0, "ed": 0.0, "nd": 0.0}
        for b_index, start in enumerate(range(0, n_train, cfg.batch_size)):
            take = perm[start : start + cfg.batch_size]
            if cfg.beta > 0 and cfg.resample_aug_per_batch:
                aug = node_drop(
                    graph, cfg.keep_prob_users, cfg.keep_prob_items,
                    seed=int(_stream(cfg.seed, epoch, 2, b_index).integers(0, 2**63)),
                )
            batch = make_step_batch(
                train_edges, take, cfg, graph.num_users, graph.num_items, neg_rng
            )
            metrics, grads = step_loss(graph, aug, batch, params, cfg)
            adam_step(params, grads, state, cfg)
            for key in sums:
                sums[key] += metrics[key] * len(take)

        valid_mse = _holdout_mse(
            graph, params, cfg, valid_users, valid_items, valid_ratings,
            dataset.rating_min, dataset.rating_max,
        )
        trace.append(EpochRow(
            epoch=epoch,
            train_mse=sums["mse"] / n_train,
            train_ed=sums["ed"] / n_train,
            train_nd=sums["nd"] / n_train,
            valid_mse=valid_mse,
        ))

        if initial_valid is None:
            initial_valid = valid_mse
        elif not np.isfinite(valid_mse) or valid_mse > 10.0 * initial_valid:
            if trace_path is not None:
                write_trace(trace, trace_path)
            raise DivergenceError(
                f"validation MSE {valid_mse:.6g} at epoch {epoch} exceeds 10x "
                f"the initial {initial_valid:.6g}; trace retained"
            )

        if valid_mse < best_valid:
            best_valid = valid_mse
            best_epoch = epoch
            best_params = {k: v.copy() for k, v in params.items()}
            bad_epochs = 0
            if ckpt_path is not None:
                model.write_checkpoint(ckpt_path, best_params, cfg)
        else:
            bad_epochs += 1
            if bad_epochs >= cfg.patience:
                stopped_early = True
                break

    if trace_path is not None:
        write_trace(trace, trace_path)
    return TrainResult(
        params=best_params,
        config=cfg,
        trace=trace,
        best_epoch=best_epoch,
        best_valid_mse=float(best_valid),
        epochs_run=epoch,
        stopped_early=stopped_early,
        checkpoint_path=ckpt_path,
        trace_path=trace_path,
    )
