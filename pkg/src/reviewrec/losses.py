"""Supervised MSE, the two contrastive losses, and the joint objective.

Both contrastive tasks score pairs with a bilinear similarity
F(a, b) = sigmoid(a' W b) and use one uniformly sampled negative per anchor.
Two loss forms are supported:

  bce (default):  mean over anchors of  -log F(pos) - log(1 - F(neg))
  literal:        -mean log F(pos) + mean log F(neg)

The literal form is unbounded below as F(neg) -> 0, so bce is the default;
the literal form stays available for comparison runs. Log arguments are
clamped to [1e-12, 1 - 1e-12]; the clamp sits inside the log, so gradients
are exactly zero where it binds.

Negative sampling happens in the training step with an explicit PRNG; the
functions here receive the drawn indices and are pure.
"""

from __future__ import annotations

import numpy as np

from .model import Params, sigmoid

CLAMP_LO = 1e-12
CLAMP_HI = 1.0 - 1e-12


def similarity(a: np.ndarray, b: np.ndarray, weight: np.ndarray) -> float:
    """sigmoid(a' W b) for a single vector pair."""
    return float(sigmoid(a @ weight @ b))


def bilinear_scores(left: np.ndarray, right: np.ndarray, weight: np.ndarray) -> np.ndarray:
    """Row-wise a_k' W b_k for stacked vector pairs."""
    return np.sum((left @ weight) * right, axis=1)


def _pair_terms(pos_scores: np.ndarray, neg_scores: np.ndarray, loss_form: str):
    """Per-anchor loss and d(loss)/d(score), already divided by anchor count."""
    n = len(pos_scores)
    f_pos = sigmoid(pos_scores)
    f_neg = sigmoid(neg_scores)
    pos_live = (f_pos > CLAMP_LO) & (f_pos < CLAMP_HI)
    neg_live = (f_neg > CLAMP_LO) & (f_neg < CLAMP_HI)
    if loss_form == "bce":
        loss = float(
            np.mean(-np.log(np.clip(f_pos, CLAMP_LO, CLAMP_HI)))
            + np.mean(-np.log(np.clip(1.0 - f_neg, CLAMP_LO, CLAMP_HI)))
        )
        d_pos = np.where(pos_live, -(1.0 - f_pos), 0.0) / n
        d_neg = np.where(neg_live, f_neg, 0.0) / n
    elif loss_form == "literal":
        loss = float(
            np.mean(-np.log(np.clip(f_pos, CLAMP_LO, CLAMP_HI)))
            + np.mean(np.log(np.clip(f_neg, CLAMP_LO, CLAMP_HI)))
        )
        d_pos = np.where(pos_live, -(1.0 - f_pos), 0.0) / n
        d_neg = np.where(neg_live, 1.0 - f_neg, 0.0) / n
    else:
        raise ValueError(f"unknown loss_form {loss_form!r}")
    return loss, d_pos, d_neg


def _contrast_side(
    anchor_vecs: np.ndarray,
    pos_vecs: np.ndarray,
    neg_vecs: np.ndarray,
    weight: np.ndarray,
    loss_form: str,
):
    """Loss for one anchor set plus gradients w.r.t. inputs and the weight."""
    pos_scores = bilinear_scores(anchor_vecs, pos_vecs, weight)
    neg_scores = bilinear_scores(anchor_vecs, neg_vecs, weight)
    loss, d_pos, d_neg = _pair_terms(pos_scores, neg_scores, loss_form)
    d_weight = (anchor_vecs * d_pos[:, None]).T @ pos_vecs
    d_weight += (anchor_vecs * d_neg[:, None]).T @ neg_vecs
    projected = anchor_vecs @ weight
    d_anchor = d_pos[:, None] * (pos_vecs @ weight.T) + d_neg[:, None] * (neg_vecs @ weight.T)
    d_positive = d_pos[:, None] * projected
    d_negative = d_neg[:, None] * projected
    return loss, d_anchor, d_positive, d_negative, d_weight


def nd_loss(
    user_view1: np.ndarray,
    user_view2: np.ndarray,
    item_view1: np.ndarray,
    item_view2: np.ndarray,
    user_anchors: np.ndarray,
    user_negatives: np.ndarray,
    item_anchors: np.ndarray,
    item_negatives: np.ndarray,
    params: Params,
    loss_form: str = "bce",
    scale: float = 1.0,
    grads: Params | None = None,
    d_view1: tuple[np.ndarray, np.ndarray] | None = None,
    d_view2: tuple[np.ndarray, np.ndarray] | None = None,
) -> float:
    """Node discrimination across two augmented views, user and item terms summed.

    Anchors come from view 1; positives are the same nodes in view 2 and
    negatives are the sampled other nodes in view 2. When grad buffers are
    given, scale * d(loss) accumulates into them.
    """
    total = 0.0
    sides = (
        ("sim_nd_user", user_view1, user_view2, user_anchors, user_negatives, 0),
        ("sim_nd_item", item_view1, item_view2, item_anchors, item_negatives, 1),
    )
    for key, view1, view2, anchors, negatives, slot in sides:
        if len(anchors) == 0:
            continue
        loss, d_anchor, d_positive, d_negative, d_weight = _contrast_side(
            view1[anchors], view2[anchors], view2[negatives], params[key], loss_form
        )
        total += loss
        if grads is not None:
            grads[key] += scale * d_weight
            np.add.at(d_view1[slot], anchors, scale * d_anchor)
            np.add.at(d_view2[slot], anchors, scale * d_positive)
            np.add.at(d_view2[slot], negatives, scale * d_negative)
    return total


def ed_loss(
    features: np.ndarray,
    pos_reviews: np.ndarray,
    neg_reviews: np.ndarray,
    params: Params,
    loss_form: str = "bce",
    scale: float = 1.0,
    grads: Params | None = None,
) -> tuple[float, np.ndarray | None]:
    """Edge discrimination: interaction features against their own review
    features, with uniformly drawn other reviews as negatives.

    Review features are frozen, so gradients flow only to the interaction
    features (returned, scaled) and the bilinear weight.
    """
    loss, d_anchor, _, _, d_weight = _contrast_side(
        features, pos_reviews, neg_reviews, params["sim_ed"], loss_form
    )
    if grads is None:
        return loss, None
    grads["sim_ed"] += scale * d_weight
    return loss, scale * d_anchor


def mse_loss(predictions: np.ndarray, ratings: np.ndarray) -> float:
    """Mean squared residual over the batch."""
    if len(predictions) == 0:
        raise ValueError("mse_loss needs at least one prediction")
    if len(predictions) != len(ratings):
        raise ValueError("predictions and ratings differ in length")
    diff = np.asarray(predictions, dtype=float) - np.asarray(ratings, dtype=float)
    return float(np.mean(diff * diff))


def mse_grad(predictions: np.ndarray, ratings: np.ndarray) -> np.ndarray:
    return 2.0 * (predictions - ratings) / len(predictions)


def total_loss(l1: float, l2: float, l3: float, alpha: float, beta: float) -> float:
    """Joint objective L1 + alpha * L2 + beta * L3."""
    if alpha < 0 or beta < 0:
        raise ValueError("alpha and beta must be non-negative")
    return l1 + alpha * l2 + beta * l3
