"""Forward computation and exact backward passes for the review-gated model.

Message passing uses per-rating parameters: two gate vectors scoring the
review feature, and two square transforms applied to the review feature and
the source-node embedding. Both propagation directions share one parameter
set per rating. Aggregation sums a node's incoming messages over all ratings
and applies a per-layer weight; interaction modeling runs the concatenated
final embeddings through a two-hidden-layer GELU MLP; the prediction is a
dot product with a learned vector.

Ablation variants: "wo_review" drops the transformed-review addend entirely;
"wo_weight" replaces the source-embedding gate by 1.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import erf

from .config import TrainConfig
from .graph import RatingBucket, ReviewGraph

Params = dict[str, np.ndarray]

_SQRT2 = np.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)


def sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def gelu(x):
    """Exact-erf GELU: 0.5 * x * (1 + erf(x / sqrt(2)))."""
    return 0.5 * x * (1.0 + erf(x / _SQRT2))


def gelu_grad(x):
    return 0.5 * (1.0 + erf(x / _SQRT2)) + x * _INV_SQRT_2PI * np.exp(-0.5 * x * x)


def param_spec(cfg: TrainConfig, num_users: int, num_items: int,
               rating_values: list[int]) -> list[tuple[str, tuple[int, ...], str]]:
    """(name, shape, init kind) for every trainable tensor; kind is xavier|zeros."""
    d = cfg.dim
    df = cfg.final_dim
    spec: list[tuple[str, tuple[int, ...], str]] = [
        ("user_emb", (num_users, d), "xavier"),
        ("item_emb", (num_items, d), "xavier"),
    ]
    for l in range(1, cfg.layers + 1):
        for r in rating_values:
            spec.append((f"gate_review_l{l}_r{r}", (d,), "xavier"))
            spec.append((f"gate_source_l{l}_r{r}", (d,), "xavier"))
            spec.append((f"review_proj_l{l}_r{r}", (d, d), "xavier"))
            spec.append((f"source_proj_l{l}_r{r}", (d, d), "xavier"))
        if cfg.per_side_agg:
            spec.append((f"agg_user_l{l}", (d, d), "xavier"))
            spec.append((f"agg_item_l{l}", (d, d), "xavier"))
        else:
            spec.append((f"agg_l{l}", (d, d), "xavier"))
    spec += [
        ("mlp_w1", (d, 2 * df), "xavier"),
        ("mlp_b1", (d,), "zeros"),
        ("mlp_w2", (d, d), "xavier"),
        ("mlp_b2", (d,), "zeros"),
        ("predict_w", (d,), "xavier"),
        ("sim_nd_user", (df, df), "xavier"),
        ("sim_nd_item", (df, df), "xavier"),
        ("sim_ed", (d, d), "xavier"),
    ]
    if cfg.use_bias:
        spec += [
            ("bias_global", (1,), "zeros"),
            ("bias_user", (num_users,), "zeros"),
            ("bias_item", (num_items,), "zeros"),
        ]
    return spec


def zero_grads(params: Params) -> Params:
    return {name: np.zeros_like(value) for name, value in params.items()}


def _agg_keys(cfg: TrainConfig, layer: int) -> tuple[str, str]:
    if cfg.per_side_agg:
        return f"agg_user_l{layer}", f"agg_item_l{layer}"
    key = f"agg_l{layer}"
    return key, key


def pass_message(
    params: Params,
    layer: int,
    rating: int,
    review_vec: np.ndarray,
    src_vec: np.ndarray,
    normalizer: float,
    variant: str = "full",
) -> np.ndarray:
    """Single-edge message toward the destination node.

    full:      [sig(g_rev . e) * W_rev e + sig(g_src . e) * W_src src] * norm
    wo_review: [sig(g_src . e) * W_src src] * norm
    wo_weight: [sig(g_rev . e) * W_rev e + W_src src] * norm
    """
    key = f"review_proj_l{layer}_r{rating}"
    if key not in params:
        raise ValueError(f"no parameters registered for rating {rating} at layer {layer}")
    if normalizer <= 0:
        raise ValueError("normalizer must be positive")
    w_src = params[f"source_proj_l{layer}_r{rating}"]
    g2 = sigmoid(float(params[f"gate_source_l{layer}_r{rating}"] @ review_vec))
    if variant == "wo_review":
        return g2 * (w_src @ src_vec) * normalizer
    w_rev = params[key]
    g1 = sigmoid(float(params[f"gate_review_l{layer}_r{rating}"] @ review_vec))
    review_term = g1 * (w_rev @ review_vec)
    if variant == "wo_weight":
        return (review_term + w_src @ src_vec) * normalizer
    if variant != "full":
        raise ValueError(f"unknown variant {variant!r}")
    return (review_term + g2 * (w_src @ src_vec)) * normalizer


def aggregate(params: Params, layer: int, messages, side: str = "user",
              dim: int | None = None, per_side_agg: bool = False) -> np.ndarray:
    """Layer weight applied to the sum of a node's messages; empty sum -> zeros."""
    key = (f"agg_{side}_l{layer}" if per_side_agg else f"agg_l{layer}")
    weight = params[key]
    msgs = list(messages)
    if not msgs:
        return np.zeros(dim if dim is not None else weight.shape[0], dtype=weight.dtype)
    return weight @ np.sum(msgs, axis=0)


@dataclass
class BucketCache:
    bucket: RatingBucket
    review: np.ndarray       # (n, d) frozen features
    norm: np.ndarray         # (n,)
    gate_review: np.ndarray  # (n,) sigmoid outputs
    gate_source: np.ndarray  # (n,)
    review_term: np.ndarray  # (n, d) W_rev e
    src_user: np.ndarray     # (n, d) layer-input user embeddings on edges
    src_item: np.ndarray     # (n, d) layer-input item embeddings on edges
    term_from_item: np.ndarray  # (n, d) W_src v  (item -> user direction)
    term_from_user: np.ndarray  # (n, d) W_src u  (user -> item direction)


@dataclass
class LayerCache:
    user_in: np.ndarray   # (M, d) layer input
    item_in: np.ndarray   # (N, d)
    agg_user: np.ndarray  # (M, d) message sums before the layer weight
    agg_item: np.ndarray  # (N, d)
    buckets: dict[int, BucketCache] = field(default_factory=dict)


@dataclass
class PropagationCache:
    layers: list[LayerCache]
    user_final: np.ndarray  # (M, d) or (M, L*d)
    item_final: np.ndarray


def propagate(graph: ReviewGraph, params: Params, cfg: TrainConfig) -> PropagationCache:
    """Run L rounds of message passing + aggregation over all training edges.

    Final embeddings are the last layer's outputs, or the concatenation of
    every layer's outputs under concat_layers. Isolated nodes come out zero.
    """
    dtype = params["user_emb"].dtype
    user_cur = params["user_emb"]
    item_cur = params["item_emb"]
    layers: list[LayerCache] = []
    user_outs, item_outs = [], []

    for l in range(1, cfg.layers + 1):
        agg_user = np.zeros((graph.num_users, cfg.dim), dtype=dtype)
        agg_item = np.zeros((graph.num_items, cfg.dim), dtype=dtype)
        cache = LayerCache(user_in=user_cur, item_in=item_cur,
                           agg_user=agg_user, agg_item=agg_item)
        for r in graph.rating_values:
            bucket = graph.buckets[r]
            if len(bucket) == 0:
                continue
            review = graph.features[bucket.edge_ids].astype(dtype, copy=False)
            norm = graph.normalizers(bucket).astype(dtype, copy=False)
            g_src = sigmoid(review @ params[f"gate_source_l{l}_r{r}"])
            src_user = user_cur[bucket.users]
            src_item = item_cur[bucket.items]
            term_from_item = src_item @ params[f"source_proj_l{l}_r{r}"].T
            term_from_user = src_user @ params[f"source_proj_l{l}_r{r}"].T

            if cfg.variant == "wo_review":
                g_rev = np.zeros_like(g_src)
                review_term = np.zeros_like(term_from_item)
                msg_to_user = g_src[:, None] * term_from_item
                msg_to_item = g_src[:, None] * term_from_user
            else:
                g_rev = sigmoid(review @ params[f"gate_review_l{l}_r{r}"])
                review_term = review @ params[f"review_proj_l{l}_r{r}"].T
                gated_review = g_rev[:, None] * review_term
                if cfg.variant == "wo_weight":
                    msg_to_user = gated_review + term_from_item
                    msg_to_item = gated_review + term_from_user
                else:
                    msg_to_user = gated_review + g_src[:, None] * term_from_item
                    msg_to_item = gated_review + g_src[:, None] * term_from_user
            msg_to_user *= norm[:, None]
            msg_to_item *= norm[:, None]
            np.add.at(agg_user, bucket.users, msg_to_user)
            np.add.at(agg_item, bucket.items, msg_to_item)
            cache.buckets[r] = BucketCache(
                bucket=bucket, review=review, norm=norm,
                gate_review=g_rev, gate_source=g_src, review_term=review_term,
                src_user=src_user, src_item=src_item,
                term_from_item=term_from_item, term_from_user=term_from_user,
            )
        user_key, item_key = _agg_keys(cfg, l)
        user_cur = agg_user @ params[user_key].T
        item_cur = agg_item @ params[item_key].T
        layers.append(cache)
        user_outs.append(user_cur)
        item_outs.append(item_cur)

    if cfg.final_embedding == "concat_layers":
        user_final = np.concatenate(user_outs, axis=1)
        item_final = np.concatenate(item_outs, axis=1)
    else:
        user_final = user_outs[-1]
        item_final = item_outs[-1]
    return PropagationCache(layers=layers, user_final=user_final, item_final=item_final)


def propagate_backward(
    graph: ReviewGraph,
    params: Params,
    cfg: TrainConfig,
    cache: PropagationCache,
    d_user_final: np.ndarray,
    d_item_final: np.ndarray,
    grads: Params,
) -> None:
    """Accumulate gradients of a scalar loss through a propagation pass.

    d_user_final/d_item_final hold the loss gradient w.r.t. the final
    embeddings; frozen review features receive no gradient.
    """
    d = cfg.dim
    carry_user = np.zeros_like(cache.layers[0].user_in)
    carry_item = np.zeros_like(cache.layers[0].item_in)

    for l in range(cfg.layers, 0, -1):
        layer = cache.layers[l - 1]
        if cfg.final_embedding == "concat_layers":
            extern_user = d_user_final[:, (l - 1) * d : l * d]
            extern_item = d_item_final[:, (l - 1) * d : l * d]
        elif l == cfg.layers:
            extern_user, extern_item = d_user_final, d_item_final
        else:
            extern_user = extern_item = 0.0
        d_user_out = extern_user + carry_user
        d_item_out = extern_item + carry_item

        user_key, item_key = _agg_keys(cfg, l)
        grads[user_key] += d_user_out.T @ layer.agg_user
        grads[item_key] += d_item_out.T @ layer.agg_item
        d_agg_user = d_user_out @ params[user_key]
        d_agg_item = d_item_out @ params[item_key]

        carry_user = np.zeros_like(layer.user_in)
        carry_item = np.zeros_like(layer.item_in)
        for r, bc in layer.buckets.items():
            d_msg_user = d_agg_user[bc.bucket.users] * bc.norm[:, None]
            d_msg_item = d_agg_item[bc.bucket.items] * bc.norm[:, None]

            if cfg.variant == "wo_weight":
                d_term_item = d_msg_user
                d_term_user = d_msg_item
            else:
                d_term_item = bc.gate_source[:, None] * d_msg_user
                d_term_user = bc.gate_source[:, None] * d_msg_item
                d_gate_source = (
                    np.sum(d_msg_user * bc.term_from_item, axis=1)
                    + np.sum(d_msg_item * bc.term_from_user, axis=1)
                )
                ds = d_gate_source * bc.gate_source * (1.0 - bc.gate_source)
                grads[f"gate_source_l{l}_r{r}"] += bc.review.T @ ds

            if cfg.variant != "wo_review":
                d_review_term = bc.gate_review[:, None] * (d_msg_user + d_msg_item)
                grads[f"review_proj_l{l}_r{r}"] += d_review_term.T @ bc.review
                d_gate_review = np.sum(
                    (d_msg_user + d_msg_item) * bc.review_term, axis=1
                )
                ds = d_gate_review * bc.gate_review * (1.0 - bc.gate_review)
                grads[f"gate_review_l{l}_r{r}"] += bc.review.T @ ds

            w_src = params[f"source_proj_l{l}_r{r}"]
            grads[f"source_proj_l{l}_r{r}"] += (
                d_term_item.T @ bc.src_item + d_term_user.T @ bc.src_user
            )
            np.add.at(carry_item, bc.bucket.items, d_term_item @ w_src)
            np.add.at(carry_user, bc.bucket.users, d_term_user @ w_src)

    grads["user_emb"] += carry_user
    grads["item_emb"] += carry_item


@dataclass
class MlpCache:
    inputs: np.ndarray   # (B, 2*df) concatenated pair embeddings
    pre1: np.ndarray     # (B, d) first layer pre-activation
    hidden: np.ndarray   # (B, d) first layer output
    pre2: np.ndarray     # (B, d) second layer pre-activation
    features: np.ndarray  # (B, d) interaction features h


def interaction_features(
    user_vecs: np.ndarray, item_vecs: np.ndarray, params: Params
) -> MlpCache:
    """Two-hidden-layer GELU MLP over [u, v] pairs; returns the full cache."""
    w1 = params["mlp_w1"]
    inputs = np.concatenate([np.atleast_2d(user_vecs), np.atleast_2d(item_vecs)], axis=1)
    if inputs.shape[1] != w1.shape[1]:
        raise ValueError(
            f"embedding width {inputs.shape[1]} does not match MLP input {w1.shape[1]}"
        )
    pre1 = inputs @ w1.T + params["mlp_b1"]
    hidden = gelu(pre1)
    pre2 = hidden @ params["mlp_w2"].T + params["mlp_b2"]
    return MlpCache(inputs=inputs, pre1=pre1, hidden=hidden, pre2=pre2, features=gelu(pre2))


def interaction_feature(user_vec: np.ndarray, item_vec: np.ndarray, params: Params) -> np.ndarray:
    return interaction_features(user_vec[None, :], item_vec[None, :], params).features[0]


def interaction_backward(
    params: Params, cache: MlpCache, d_features: np.ndarray, grads: Params
) -> tuple[np.ndarray, np.ndarray]:
    """Backprop through the interaction MLP; returns (d_user_vecs, d_item_vecs)."""
    d_pre2 = d_features * gelu_grad(cache.pre2)
    grads["mlp_w2"] += d_pre2.T @ cache.hidden
    grads["mlp_b2"] += d_pre2.sum(axis=0)
    d_hidden = d_pre2 @ params["mlp_w2"]
    d_pre1 = d_hidden * gelu_grad(cache.pre1)
    grads["mlp_w1"] += d_pre1.T @ cache.inputs
    grads["mlp_b1"] += d_pre1.sum(axis=0)
    d_inputs = d_pre1 @ params["mlp_w1"]
    df = cache.inputs.shape[1] // 2
    return d_inputs[:, :df], d_inputs[:, df:]


def predict_rating(h: np.ndarray, params: Params) -> float:
    """Dot product of the interaction feature with the prediction vector."""
    return float(params["predict_w"] @ h)


def predict_batch(
    features: np.ndarray,
    params: Params,
    users: np.ndarray | None = None,
    items: np.ndarray | None = None,
) -> np.ndarray:
    preds = features @ params["predict_w"]
    if "bias_global" in params and users is not None and items is not None:
        preds = preds + params["bias_global"][0] + params["bias_user"][users] + params["bias_item"][items]
    return preds


CHECKPOINT_MAGIC = b"RGCK"
CHECKPOINT_VERSION = 1


def write_checkpoint(path, params: Params, cfg: TrainConfig) -> None:
    """Binary checkpoint: magic, version, config echo, then named float64 tensors."""
    import os
    import struct

    tmp = str(path) + ".tmp"
    with open(tmp, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", CHECKPOINT_VERSION))
        blob = cfg.to_text().encode("utf-8")
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        fh.write(struct.pack("<Q", len(params)))
        for name in sorted(params):
            data = np.ascontiguousarray(params[name], dtype="<f8")
            nb = name.encode("utf-8")
            fh.write(struct.pack("<I", len(nb)))
            fh.write(nb)
            fh.write(struct.pack("<I", data.ndim))
            for dim in data.shape:
                fh.write(struct.pack("<Q", dim))
            fh.write(data.tobytes())
    os.replace(tmp, path)


def read_checkpoint(path) -> tuple[Params, TrainConfig]:
    import struct

    from .config import parse_config_text

    with open(path, "rb") as fh:
        if fh.read(4) != CHECKPOINT_MAGIC:
            raise ValueError(f"{path}: not a checkpoint file")
        (version,) = struct.unpack("<I", fh.read(4))
        if version != CHECKPOINT_VERSION:
            raise ValueError(f"{path}: unsupported checkpoint version {version}")
        (blob_len,) = struct.unpack("<Q", fh.read(8))
        cfg = parse_config_text(fh.read(blob_len).decode("utf-8"))
        (count,) = struct.unpack("<Q", fh.read(8))
        params: Params = {}
        for _ in range(count):
            (name_len,) = struct.unpack("<I", fh.read(4))
            name = fh.read(name_len).decode("utf-8")
            (rank,) = struct.unpack("<I", fh.read(4))
            shape = tuple(struct.unpack("<Q", fh.read(8))[0] for _ in range(rank))
            size = int(np.prod(shape)) if shape else 1
            data = np.frombuffer(fh.read(size * 8), dtype="<f8").reshape(shape).copy()
            params[name] = data.astype(np.dtype(cfg.dtype))
    return params, cfg
