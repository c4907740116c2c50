"""Review-aware graph contrastive learning for rating prediction."""

__version__ = "0.1.0"

from .config import TrainConfig
from .data import Dataset, DatasetSplit, ingest, read_canonical, read_split, split
from .embed import ReviewEmbeddingTable, build_embedding_table, read_table, write_table
from .graph import ReviewGraph, build_graph, node_drop
from .model import read_checkpoint, write_checkpoint
from .train import TrainResult, train_loop

__all__ = [
    "TrainConfig",
    "Dataset",
    "DatasetSplit",
    "ingest",
    "read_canonical",
    "read_split",
    "split",
    "ReviewEmbeddingTable",
    "build_embedding_table",
    "read_table",
    "write_table",
    "ReviewGraph",
    "build_graph",
    "node_drop",
    "read_checkpoint",
    "write_checkpoint",
    "TrainResult",
    "train_loop",
]
