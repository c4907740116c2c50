"""Encode every review in a canonical file and write the raw embedding table.

Output is the "RGEB" binary (magic, u32 version, u64 rows, u32 dim, float32
little-endian rows) with one pre-whitening row per edge in edge_id order,
plus a manifest sidecar recording the encoder, pooling, shape and a checksum
of the canonical file the rows were built against. Whitening happens
downstream at import time, never here.
"""

import hashlib
import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .canonical import read_review_texts
from .encode import encode_texts, load_encoder

MAGIC = b"RGEB"
FORMAT_VERSION = 1


@dataclass
class ExportManifest:
    encoder: str
    pooling: str
    raw_dim: int
    row_count: int
    canonical_sha256: str


def manifest_path_for(out_path: str | Path) -> Path:
    return Path(str(out_path) + ".manifest.json")


def sha256_file(path: str | Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def write_rows(rows: np.ndarray, path: str | Path) -> None:
    import struct

    rows = np.ascontiguousarray(rows, dtype="<f4")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", FORMAT_VERSION))
        fh.write(struct.pack("<Q", rows.shape[0]))
        fh.write(struct.pack("<I", rows.shape[1]))
        fh.write(rows.tobytes())


def export(canonical_path: str | Path, out_path: str | Path, encoder_name: str,
           pooling: str = "mean", batch_size: int = 64) -> ExportManifest:
    """Write the embedding file and its manifest; returns the manifest.

    The manifest is only written once the row count has been verified
    against the canonical file, so a half-finished export is never
    importable.
    """
    texts = read_review_texts(canonical_path)
    tokenizer, model = load_encoder(encoder_name)
    rows = encode_texts(texts, tokenizer, model, pooling, batch_size)
    write_rows(rows, out_path)
    if rows.shape[0] != len(texts):
        raise ValueError(
            f"encoded {rows.shape[0]} rows for {len(texts)} edges; "
            "manifest not written"
        )
    manifest = ExportManifest(
        encoder=encoder_name,
        pooling=pooling,
        raw_dim=int(rows.shape[1]),
        row_count=int(rows.shape[0]),
        canonical_sha256=sha256_file(canonical_path),
    )
    manifest_path_for(out_path).write_text(
        json.dumps(asdict(manifest), indent=2, sort_keys=True) + "\n",
        encoding="utf-8",
    )
    return manifest
