"""Rating-typed bipartite training graph and node-drop augmentation."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import Dataset, DatasetSplit
from .embed import ReviewEmbeddingTable


@dataclass
class RatingBucket:
    """Training edges carrying one rating value, in ascending edge_id order."""

    users: np.ndarray     # (n_r,) int64
    items: np.ndarray     # (n_r,) int64
    edge_ids: np.ndarray  # (n_r,) int64

    def __len__(self) -> int:
        return len(self.edge_ids)


@dataclass
class ReviewGraph:
    """Bipartite graph over training edges with per-rating buckets and degrees.

    Degrees count all training edges regardless of rating; per-edge
    normalizers are 1/sqrt(deg_user * deg_item). Only training-split edges
    are ever present. Immutable after construction.
    """

    num_users: int
    num_items: int
    rating_values: list[int]
    buckets: dict[int, RatingBucket]
    deg_users: np.ndarray  # (M,) int64
    deg_items: np.ndarray  # (N,) int64
    features: np.ndarray   # (|E| total, d) float64, indexed by edge_id

    @property
    def num_edges(self) -> int:
        return int(sum(len(b) for b in self.buckets.values()))

    @property
    def feature_dim(self) -> int:
        return self.features.shape[1]

    def edge_arrays(self) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        """All training edges as (users, items, ratings, edge_ids), edge_id order."""
        users, items, ratings, eids = [], [], [], []
        for r in self.rating_values:
            b = self.buckets[r]
            users.append(b.users)
            items.append(b.items)
            ratings.append(np.full(len(b), r, dtype=np.int64))
            eids.append(b.edge_ids)
        u = np.concatenate(users) if users else np.zeros(0, dtype=np.int64)
        i = np.concatenate(items) if items else np.zeros(0, dtype=np.int64)
        r_ = np.concatenate(ratings) if ratings else np.zeros(0, dtype=np.int64)
        e = np.concatenate(eids) if eids else np.zeros(0, dtype=np.int64)
        order = np.argsort(e)
        return u[order], i[order], r_[order], e[order]

    def normalizers(self, bucket: RatingBucket) -> np.ndarray:
        return 1.0 / np.sqrt(
            self.deg_users[bucket.users].astype(np.float64)
            * self.deg_items[bucket.items].astype(np.float64)
        )


@dataclass
class AugmentedGraphPair:
    """Two node-dropped subgraphs with their kept-node masks."""

    sub1: ReviewGraph
    sub2: ReviewGraph
    kept_users1: np.ndarray
    kept_items1: np.ndarray
    kept_users2: np.ndarray
    kept_items2: np.ndarray
    seed: int


def _make_buckets(
    users: np.ndarray, items: np.ndarray, ratings: np.ndarray, eids: np.ndarray,
    rating_values: list[int],
) -> dict[int, RatingBucket]:
    buckets = {}
    for r in rating_values:
        mask = ratings == r
        order = np.argsort(eids[mask])
        buckets[r] = RatingBucket(
            users=users[mask][order], items=items[mask][order], edge_ids=eids[mask][order]
        )
    return buckets


def build_graph(
    dataset: Dataset, split: DatasetSplit, table: ReviewEmbeddingTable,
    dtype=np.float64,
) -> ReviewGraph:
    """Assemble the training ReviewGraph; validation/test edges never enter."""
    if table.row_count != dataset.num_edges:
        raise ValueError(
            f"embedding table has {table.row_count} rows for {dataset.num_edges} edges"
        )
    train_ids = np.asarray(split.train_edge_ids, dtype=np.int64)
    users = np.zeros(len(train_ids), dtype=np.int64)
    items = np.zeros(len(train_ids), dtype=np.int64)
    ratings = np.zeros(len(train_ids), dtype=np.int64)
    for k, eid in enumerate(train_ids):
        rec = dataset.records[int(eid)]
        if rec.user_idx >= dataset.num_users or rec.item_idx >= dataset.num_items:
            raise ValueError(f"edge {eid} references out-of-range node")
        users[k], items[k], ratings[k] = rec.user_idx, rec.item_idx, rec.rating

    deg_users = np.bincount(users, minlength=dataset.num_users).astype(np.int64)
    deg_items = np.bincount(items, minlength=dataset.num_items).astype(np.int64)
    rating_values = dataset.rating_values
    return ReviewGraph(
        num_users=dataset.num_users,
        num_items=dataset.num_items,
        rating_values=rating_values,
        buckets=_make_buckets(users, items, ratings, train_ids, rating_values),
        deg_users=deg_users,
        deg_items=deg_items,
        features=np.asarray(table.rows, dtype=dtype),
    )


def _subgraph(graph: ReviewGraph, keep_users: np.ndarray, keep_items: np.ndarray) -> ReviewGraph:
    """Edges survive only when both endpoints are kept; degrees recomputed."""
    users, items, ratings, eids = graph.edge_arrays()
    mask = keep_users[users] & keep_items[items]
    users, items, ratings, eids = users[mask], items[mask], ratings[mask], eids[mask]
    deg_users = np.bincount(users, minlength=graph.num_users).astype(np.int64)
    deg_items = np.bincount(items, minlength=graph.num_items).astype(np.int64)
    return ReviewGraph(
        num_users=graph.num_users,
        num_items=graph.num_items,
        rating_values=graph.rating_values,
        buckets=_make_buckets(users, items, ratings, eids, graph.rating_values),
        deg_users=deg_users,
        deg_items=deg_items,
        features=graph.features,
    )


def node_drop(
    graph: ReviewGraph,
    keep_prob_users: float,
    keep_prob_items: float,
    seed: int,
) -> AugmentedGraphPair:
    """Draw two independent node-dropped subgraphs from one seed.

    Each node is kept independently with its side's keep probability; dropping
    a node removes its edges and their review features from the subgraph.
    keep_prob=1.0 on both sides reproduces the input graph exactly.
    """
    for p, name in ((keep_prob_users, "keep_prob_users"), (keep_prob_items, "keep_prob_items")):
        if not 0.0 <= p <= 1.0:
            raise ValueError(f"{name} must be in [0, 1], got {p}")
    if keep_prob_users == 0.0 and keep_prob_items == 0.0:
        raise ValueError("keep probability zero on both sides leaves an empty graph")

    rng = np.random.Generator(np.random.PCG64(seed))
    kept_users1 = rng.random(graph.num_users) < keep_prob_users
    kept_items1 = rng.random(graph.num_items) < keep_prob_items
    kept_users2 = rng.random(graph.num_users) < keep_prob_users
    kept_items2 = rng.random(graph.num_items) < keep_prob_items
    return AugmentedGraphPair(
        sub1=_subgraph(graph, kept_users1, kept_items1),
        sub2=_subgraph(graph, kept_users2, kept_items2),
        kept_users1=kept_users1,
        kept_items1=kept_items1,
        kept_users2=kept_users2,
        kept_items2=kept_items2,
        seed=seed,
    )
