"""Raw review corpora -> canonical interaction file + deterministic splits.

The canonical file is a plain-text format:

    header line:  ``M N E rating_min rating_max``
    edge line:    ``edge_id user_idx item_idx rating<TAB>review_text``

Review text is escaped so each record stays on one line (backslash, tab,
newline and carriage return). Edge ids are contiguous from 0 in file order.
"""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

DEFAULT_FIELD_MAP = {
    "user": "reviewerID",
    "item": "asin",
    "rating": "overall",
    "review": "reviewText",
}

DEFAULT_FRACTIONS = (0.8, 0.1, 0.1)


@dataclass
class InteractionRecord:
    user_idx: int
    item_idx: int
    rating: int
    review_text: str
    edge_id: int


@dataclass
class Dataset:
    """Canonical interaction set: header counts plus records in edge_id order."""

    num_users: int
    num_items: int
    rating_min: int
    rating_max: int
    records: list[InteractionRecord] = field(default_factory=list)

    @property
    def num_edges(self) -> int:
        return len(self.records)

    @property
    def rating_values(self) -> list[int]:
        return list(range(self.rating_min, self.rating_max + 1))


@dataclass
class DatasetSplit:
    train_edge_ids: np.ndarray
    valid_edge_ids: np.ndarray
    test_edge_ids: np.ndarray
    seed: int
    fractions: tuple[float, float, float] = DEFAULT_FRACTIONS


def escape_review(text: str) -> str:
    return (
        text.replace("\\", "\\\\")
        .replace("\t", "\\t")
        .replace("\n", "\\n")
        .replace("\r", "\\r")
    )


def unescape_review(text: str) -> str:
    out = []
    i = 0
    while i < len(text):
        c = text[i]
        if c == "\\" and i + 1 < len(text):
            nxt = text[i + 1]
            mapped = {"\\": "\\", "t": "\t", "n": "\n", "r": "\r"}.get(nxt)
            if mapped is not None:
                out.append(mapped)
                i += 2
                continue
        out.append(c)
        i += 1
    return "".join(out)


def _kcore_filter(pairs: list[tuple[str, str]], min_core: int) -> set[int]:
    """Indices of `pairs` surviving iterative user/item >= min_core filtering."""
    alive = set(range(len(pairs)))
    while True:
        user_counts = Counter(pairs[k][0] for k in alive)
        item_counts = Counter(pairs[k][1] for k in alive)
        drop = {
            k
            for k in alive
            if user_counts[pairs[k][0]] < min_core or item_counts[pairs[k][1]] < min_core
        }
        if not drop:
            return alive
        alive -= drop


def ingest(
    raw_path: str | Path,
    field_map: dict[str, str] | None = None,
    min_core: int = 1,
    rating_min: int = 1,
    rating_max: int = 5,
) -> Dataset:
    """Parse a JSON-lines review corpus into a canonical Dataset.

    String user/item ids are mapped to dense indices in first-appearance
    order. Duplicate (user, item) pairs keep the last occurrence. The k-core
    filter removes users/items with fewer than `min_core` interactions,
    iterating to a fixed point, before indices are assigned.
    """
    fm = dict(DEFAULT_FIELD_MAP)
    if field_map:
        fm.update(field_map)

    raw_records: dict[tuple[str, str], tuple[int, str]] = {}
    with open(raw_path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ValueError(f"{raw_path}: malformed JSON on line {lineno}: {exc}") from exc
            try:
                user = str(obj[fm["user"]])
                item = str(obj[fm["item"]])
                raw_rating = obj[fm["rating"]]
            except KeyError as exc:
                raise ValueError(f"{raw_path}: line {lineno} missing field {exc}") from exc
            rating = int(round(float(raw_rating)))
            if rating < rating_min or rating > rating_max:
                raise ValueError(
                    f"{raw_path}: line {lineno}: rating {raw_rating} outside "
                    f"[{rating_min}, {rating_max}] after rounding"
                )
            review = obj.get(fm["review"], "")
            review = "" if review is None else str(review)
            # dict insertion keeps the pair's first position; overwriting keeps
            # the last-seen rating/review for re-reviewed pairs.
            raw_records[(user, item)] = (rating, review)

    pairs = list(raw_records.keys())
    alive = _kcore_filter(pairs, min_core)
    if not alive:
        raise ValueError(f"{raw_path}: no interactions left after {min_core}-core filtering")

    user_ids: dict[str, int] = {}
    item_ids: dict[str, int] = {}
    records: list[InteractionRecord] = []
    for k, (user, item) in enumerate(pairs):
        if k not in alive:
            continue
        uid = user_ids.setdefault(user, len(user_ids))
        iid = item_ids.setdefault(item, len(item_ids))
        rating, review = raw_records[(user, item)]
        records.append(InteractionRecord(uid, iid, rating, review, edge_id=len(records)))

    return Dataset(
        num_users=len(user_ids),
        num_items=len(item_ids),
        rating_min=rating_min,
        rating_max=rating_max,
        records=records,
    )


def write_canonical(dataset: Dataset, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(
            f"{dataset.num_users} {dataset.num_items} {dataset.num_edges} "
            f"{dataset.rating_min} {dataset.rating_max}\n"
        )
        for rec in dataset.records:
            fh.write(
                f"{rec.edge_id} {rec.user_idx} {rec.item_idx} {rec.rating}\t"
                f"{escape_review(rec.review_text)}\n"
            )


def read_canonical(path: str | Path) -> Dataset:
    with open(path, "r", encoding="utf-8", newline="\n") as fh:
        header = fh.readline().split()
        if len(header) != 5:
            raise ValueError(f"{path}: bad header, expected 'M N E rating_min rating_max'")
        m, n, e, rmin, rmax = (int(x) for x in header)
        records = []
        for lineno, line in enumerate(fh, start=2):
            line = line.rstrip("\n")
            if not line:
                continue
            head, _, review = line.partition("\t")
            parts = head.split()
            if len(parts) != 4:
                raise ValueError(f"{path}: malformed edge line {lineno}")
            edge_id, user_idx, item_idx, rating = (int(x) for x in parts)
            if edge_id != len(records):
                raise ValueError(f"{path}: line {lineno}: edge_id {edge_id} not contiguous")
            if user_idx >= m or item_idx >= n:
                raise ValueError(f"{path}: line {lineno}: node index out of range")
            if rating < rmin or rating > rmax:
                raise ValueError(f"{path}: line {lineno}: rating {rating} outside rating set")
            records.append(
                InteractionRecord(user_idx, item_idx, rating, unescape_review(review), edge_id)
            )
    if len(records) != e:
        raise ValueError(f"{path}: header declares {e} edges, found {len(records)}")
    return Dataset(m, n, rmin, rmax, records)


def split(
    dataset: Dataset,
    seed: int,
    fractions: tuple[float, float, float] = DEFAULT_FRACTIONS,
) -> DatasetSplit:
    """Shuffle edge ids with a seeded PRNG and partition train/valid/test."""
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise ValueError(f"fractions must sum to 1, got {fractions}")
    n_edges = dataset.num_edges
    if n_edges < 10:
        raise ValueError(f"need at least 10 edges to split, got {n_edges}")
    rng = np.random.Generator(np.random.PCG64(seed))
    order = rng.permutation(n_edges)
    n_train = int(round(fractions[0] * n_edges))
    n_valid = int(round(fractions[1] * n_edges))
    train = order[:n_train]
    valid = order[n_train : n_train + n_valid]
    test = order[n_train + n_valid :]
    return DatasetSplit(
        train_edge_ids=np.sort(train),
        valid_edge_ids=np.sort(valid),
        test_edge_ids=np.sort(test),
        seed=seed,
        fractions=fractions,
    )


def write_split(sp: DatasetSplit, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("train: " + " ".join(map(str, sp.train_edge_ids.tolist())) + "\n")
        fh.write("valid: " + " ".join(map(str, sp.valid_edge_ids.tolist())) + "\n")
        fh.write("test: " + " ".join(map(str, sp.test_edge_ids.tolist())) + "\n")
        fh.write(f"seed: {sp.seed}\n")


def read_split(path: str | Path) -> DatasetSplit:
    parts: dict[str, list[int]] = {}
    seed = 0
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            key, _, rest = line.partition(":")
            key = key.strip()
            if key == "seed":
                seed = int(rest.strip())
            elif key in ("train", "valid", "test"):
                parts[key] = [int(x) for x in rest.split()]
    for key in ("train", "valid", "test"):
        if key not in parts:
            raise ValueError(f"{path}: missing '{key}:' line")
    return DatasetSplit(
        train_edge_ids=np.asarray(parts["train"], dtype=np.int64),
        valid_edge_ids=np.asarray(parts["valid"], dtype=np.int64),
        test_edge_ids=np.asarray(parts["test"], dtype=np.int64),
        seed=seed,
    )
