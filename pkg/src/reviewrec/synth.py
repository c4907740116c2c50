"""Synthetic rating corpus with planted low-rank structure.

Ratings come from an affine map of latent factor dot products plus Gaussian
noise, rounded and clipped to the 1..5 scale. Each edge's raw review feature
encodes the rounding residual (the continuous score minus the integer
rating) along one fixed direction, plus isotropic noise, so review features
carry real signal that the discrete rating loses. Raw features are whitened
with the package's own transform, fitted on training rows only.
"""

from __future__ import annotations

import numpy as np

from .data import Dataset, DatasetSplit, InteractionRecord
from .embed import ReviewEmbeddingTable, apply_whiten, fit_whiten


def make_synthetic(
    num_users: int = 200,
    num_items: int = 150,
    factor_dim: int = 8,
    edges_per_user: int = 40,
    raw_dim: int = 24,
    rating_noise: float = 0.3,
    feature_noise: float = 0.05,
    seed: int = 0,
) -> tuple[Dataset, np.ndarray]:
    """Returns the dataset plus raw (pre-whitening) review features per edge.

    rating_ij = clip(round(3 + 1.1 * <p_i, q_j> / sqrt(k) + eps), 1, 5)
    raw_ij    = (continuous score - rating) * direction + noise
    """
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed])))
    user_factors = rng.normal(0.0, 1.0, size=(num_users, factor_dim))
    item_factors = rng.normal(0.0, 1.0, size=(num_items, factor_dim))
    direction = rng.normal(0.0, 1.0, size=raw_dim)
    direction /= np.linalg.norm(direction)

    records = []
    raws = []
    edge_id = 0
    for u in range(num_users):
        items = rng.choice(num_items, size=edges_per_user, replace=False)
        scores = item_factors[items] @ user_factors[u] / np.sqrt(factor_dim)
        continuous = 3.0 + 1.1 * scores + rng.normal(0.0, rating_noise, size=len(items))
        ratings = np.clip(np.round(continuous), 1, 5).astype(np.int64)
        residuals = continuous - ratings
        for item, rating, residual in zip(items, ratings, residuals):
            records.append(InteractionRecord(
                user_idx=u, item_idx=int(item), rating=int(rating),
                review_text="", edge_id=edge_id,
            ))
            raws.append(residual * direction + rng.normal(0.0, feature_noise, size=raw_dim))
            edge_id += 1

    dataset = Dataset(
        num_users=num_users, num_items=num_items,
        rating_min=1, rating_max=5, records=records,
    )
    return dataset, np.array(raws, dtype=np.float64)


def whiten_features(
    raw: np.ndarray, split: DatasetSplit, feature_dim: int
) -> ReviewEmbeddingTable:
    """Whiten raw synthetic features to feature_dim, fitting on training rows."""
    transform = fit_whiten(raw[np.asarray(split.train_edge_ids)], feature_dim)
    rows = apply_whiten(transform, raw).astype(np.float32)
    return ReviewEmbeddingTable(rows=rows, provenance="synthetic")


def global_mean_baseline(dataset: Dataset, split: DatasetSplit) -> float:
    """Test MSE of predicting the training-set mean rating for every edge."""
    train_ratings = np.array(
        [dataset.records[int(e)].rating for e in split.train_edge_ids], dtype=np.float64
    )
    test_ratings = np.array(
        [dataset.records[int(e)].rating for e in split.test_edge_ids], dtype=np.float64
    )
    if len(train_ratings) == 0 or len(test_ratings) == 0:
        raise ValueError("baseline needs non-empty train and test splits")
    mean = train_ratings.mean()
    return float(np.mean((test_ratings - mean) ** 2))
