"""Batch exporter producing raw review embeddings for the recommender."""

from .canonical import read_review_texts
from .encode import POOLINGS, encode_texts, load_encoder, pool_hidden
from .export import (
    ExportManifest,
    export,
    manifest_path_for,
    sha256_file,
    write_rows,
)

__all__ = [
    "ExportManifest",
    "POOLINGS",
    "TEST_ENCODER",
    "encode_texts",
    "export",
    "load_encoder",
    "manifest_path_for",
    "pool_hidden",
    "read_review_texts",
    "sha256_file",
    "write_rows",
]


def __getattr__(name):
    if name == "TEST_ENCODER":
        from .testing import ensure_tiny_encoder

        return ensure_tiny_encoder()
    raise AttributeError(f"module {__name__!r} has no attribute {name!r}")
