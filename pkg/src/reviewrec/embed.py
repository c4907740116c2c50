"""Frozen per-edge review features: hashed TF-IDF fallback or imported encoder
outputs, both whitened on the training split.

The on-disk table ("RGEB") is little-endian binary: magic, version u32,
row_count u64, dim u32, then row_count*dim float32 values in edge_id order.
"""

from __future__ import annotations

import hashlib
import json
import re
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data import Dataset, DatasetSplit

MAGIC = b"RGEB"
FORMAT_VERSION = 1

_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3
_TOKEN_RE = re.compile(r"[a-z0-9]+")


def fnv1a64(token: str) -> int:
    """Fixed 64-bit FNV-1a hash; process-independent, unlike builtin hash()."""
    h = _FNV_OFFSET
    for byte in token.encode("utf-8"):
        h ^= byte
        h = (h * _FNV_PRIME) & 0xFFFFFFFFFFFFFFFF
    return h


def tokenize(text: str) -> list[str]:
    return _TOKEN_RE.findall(text.lower())


def token_bucket(token: str, raw_dim: int) -> tuple[int, float]:
    h = fnv1a64(token)
    sign = -1.0 if (h >> 63) & 1 else 1.0
    return h % raw_dim, sign


@dataclass
class IdfTable:
    """Document frequencies fitted on training-split reviews."""

    doc_freq: dict[str, int]
    num_docs: int

    def idf(self, token: str) -> float:
        df = self.doc_freq.get(token, 0)
        return float(np.log((1.0 + self.num_docs) / (1.0 + df)) + 1.0)


def fit_idf(train_texts: list[str]) -> IdfTable:
    doc_freq: dict[str, int] = {}
    for text in train_texts:
        for token in set(tokenize(text)):
            doc_freq[token] = doc_freq.get(token, 0) + 1
    return IdfTable(doc_freq=doc_freq, num_docs=len(train_texts))


def hashed_tfidf_embed(text: str, raw_dim: int, idf: IdfTable) -> np.ndarray:
    """Deterministic raw_dim review vector: signed hashing, log(1+tf)*idf, L2 norm."""
    vec = np.zeros(raw_dim, dtype=np.float64)
    counts: dict[str, int] = {}
    for token in tokenize(text):
        counts[token] = counts.get(token, 0) + 1
    for token, tf in counts.items():
        bucket, sign = token_bucket(token, raw_dim)
        vec[bucket] += sign * np.log1p(tf) * idf.idf(token)
    norm = float(np.linalg.norm(vec))
    if norm > 0.0:
        vec /= norm
    return vec


@dataclass
class WhitenTransform:
    """Affine map (x - mean) @ projection taking raw vectors to d whitened dims."""

    mean: np.ndarray          # (raw_dim,)
    projection: np.ndarray    # (raw_dim, d)

    @property
    def out_dim(self) -> int:
        return self.projection.shape[1]


def fit_whiten(vectors: np.ndarray, target_dim: int, eig_floor: float = 1e-10) -> WhitenTransform:
    """Fit mean + PCA-whitening projection on the given (training) rows.

    Covariance uses the 1/N population convention. Eigenvalues are sorted
    descending and the top target_dim are kept, each eigenvector's sign fixed
    by making its largest-magnitude component positive. Eigenvalues below
    eig_floor are clamped before the inverse square root.
    """
    x = np.asarray(vectors, dtype=np.float64)
    n, raw_dim = x.shape
    if raw_dim < target_dim:
        raise ValueError(f"raw dimension {raw_dim} smaller than target {target_dim}")
    if n < target_dim + 1:
        raise ValueError(
            f"insufficient data for whitening: {n} vectors for target dim {target_dim}"
        )
    mean = x.mean(axis=0)
    centered = x - mean
    cov = centered.T @ centered / n
    eigvals, eigvecs = np.linalg.eigh(cov)        # ascending
    order = np.argsort(eigvals)[::-1][:target_dim]
    eigvals = eigvals[order]
    eigvecs = eigvecs[:, order]
    for k in range(eigvecs.shape[1]):
        pivot = np.argmax(np.abs(eigvecs[:, k]))
        if eigvecs[pivot, k] < 0:
            eigvecs[:, k] = -eigvecs[:, k]
    eigvals = np.maximum(eigvals, eig_floor)
    projection = eigvecs / np.sqrt(eigvals)
    return WhitenTransform(mean=mean, projection=projection)


def apply_whiten(transform: WhitenTransform, vectors: np.ndarray) -> np.ndarray:
    x = np.asarray(vectors, dtype=np.float64)
    if x.shape[-1] != transform.mean.shape[0]:
        raise ValueError(
            f"dimension mismatch: got {x.shape[-1]}, transform fitted on "
            f"{transform.mean.shape[0]}"
        )
    return (x - transform.mean) @ transform.projection


@dataclass
class ReviewEmbeddingTable:
    """Frozen d-dim feature per edge, row k aligned with edge_id k."""

    rows: np.ndarray  # (num_edges, dim) float32
    provenance: str   # "hashed+whitened" | "imported+whitened"

    @property
    def dim(self) -> int:
        return self.rows.shape[1]

    @property
    def row_count(self) -> int:
        return self.rows.shape[0]


def write_table(rows: np.ndarray, path: str | Path) -> None:
    rows = np.ascontiguousarray(rows, dtype="<f4")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", FORMAT_VERSION))
        fh.write(struct.pack("<Q", rows.shape[0]))
        fh.write(struct.pack("<I", rows.shape[1]))
        fh.write(rows.tobytes())


def read_table_rows(path: str | Path) -> np.ndarray:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != MAGIC:
            raise ValueError(f"{path}: bad magic {magic!r}, expected {MAGIC!r}")
        (version,) = struct.unpack("<I", fh.read(4))
        if version != FORMAT_VERSION:
            raise ValueError(f"{path}: unsupported version {version}")
        (row_count,) = struct.unpack("<Q", fh.read(8))
        (dim,) = struct.unpack("<I", fh.read(4))
        payload = fh.read(row_count * dim * 4)
        if len(payload) != row_count * dim * 4:
            raise ValueError(f"{path}: truncated payload")
    return np.frombuffer(payload, dtype="<f4").reshape(row_count, dim).copy()


def read_table(path: str | Path, provenance: str = "file") -> ReviewEmbeddingTable:
    return ReviewEmbeddingTable(rows=read_table_rows(path), provenance=provenance)


def sha256_file(path: str | Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def _check_import_manifest(import_path: Path, canonical_path: str | Path | None) -> None:
    manifest_path = Path(str(import_path) + ".manifest.json")
    if not manifest_path.exists() or canonical_path is None:
        return
    manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    want = manifest.get("canonical_sha256")
    if want is None:
        return
    have = sha256_file(canonical_path)
    if have != want:
        raise ValueError(
            f"{manifest_path}: canonical file checksum mismatch "
            f"(manifest {want[:12]}..., file {have[:12]}...)"
        )


def build_embedding_table(
    dataset: Dataset,
    split: DatasetSplit,
    mode: str,
    dim: int = 64,
    raw_dim: int = 768,
    import_path: str | Path | None = None,
    canonical_path: str | Path | None = None,
) -> ReviewEmbeddingTable:
    """Produce the whitened per-edge feature table.

    mode="hashed" embeds every review with hashed TF-IDF (idf fitted on
    training reviews); mode="import" reads pre-encoded rows from import_path,
    validating the exporter manifest checksum when a sidecar is present.
    Whitening is always fitted on training rows only, then applied to all.
    """
    n_edges = dataset.num_edges
    if mode == "hashed":
        train_set = set(split.train_edge_ids.tolist())
        idf = fit_idf([r.review_text for r in dataset.records if r.edge_id in train_set])
        raw = np.zeros((n_edges, raw_dim), dtype=np.float64)
        for rec in dataset.records:
            raw[rec.edge_id] = hashed_tfidf_embed(rec.review_text, raw_dim, idf)
        provenance = "hashed+whitened"
    elif mode == "import":
        if import_path is None:
            raise ValueError("import mode requires import_path")
        _check_import_manifest(Path(import_path), canonical_path)
        raw = read_table_rows(import_path).astype(np.float64)
        if raw.shape[0] != n_edges:
            raise ValueError(
                f"{import_path}: row count {raw.shape[0]} does not match "
                f"{n_edges} edges in the canonical file"
            )
        bad = ~np.isfinite(raw)
        if bad.any():
            edge_id = int(np.argwhere(bad.any(axis=1))[0][0])
            raise ValueError(f"{import_path}: non-finite value in row for edge_id {edge_id}")
        provenance = "imported+whitened"
    else:
        raise ValueError(f"unknown embed mode {mode!r}")

    transform = fit_whiten(raw[split.train_edge_ids], dim)
    rows = apply_whiten(transform, raw).astype(np.float32)
    return ReviewEmbeddingTable(rows=rows, provenance=provenance)
