"""Training configuration: every hyperparameter, grid value, seed and variant
flag, serialized as a flat key=value text file and echoed into checkpoints
and metrics files.
"""

from __future__ import annotations

from dataclasses import dataclass, fields, replace
from pathlib import Path

ALPHA_GRID = (0.2, 0.4, 0.6, 0.8, 1.0, 2.0)
BETA_GRID = (0.2, 0.4, 0.6, 0.8, 1.0)

VARIANTS = ("full", "wo_review", "wo_weight")
FINAL_EMBEDDINGS = ("last_layer", "concat_layers")
LOSS_FORMS = ("bce", "literal")
DTYPES = ("float64", "float32")


@dataclass
class TrainConfig:
    dim: int = 64
    layers: int = 1
    alpha: float = 0.8               # edge-discrimination weight
    beta: float = 0.2                # node-discrimination weight
    keep_prob_users: float = 0.8
    keep_prob_items: float = 0.8
    learning_rate: float = 1e-3
    batch_size: int = 1024
    max_epochs: int = 200
    patience: int = 5
    seed: int = 0
    variant: str = "full"            # full | wo_review | wo_weight
    final_embedding: str = "last_layer"   # last_layer | concat_layers
    loss_form: str = "bce"           # bce | literal
    clamp_eval: bool = False
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    weight_decay: float = 0.0
    dtype: str = "float64"
    use_bias: bool = False           # global/user/item offsets added to predictions
    per_side_agg: bool = False       # separate aggregation weights for user/item sides
    separate_nd_pairs: bool = False  # draw distinct subgraph pairs for user and item ND
    resample_aug_per_batch: bool = False
    deterministic: bool = False      # zero out wall-clock fields in outputs

    def validate(self) -> "TrainConfig":
        if self.dim < 1 or self.layers < 1:
            raise ValueError("dim and layers must be positive")
        if self.alpha < 0 or self.beta < 0:
            raise ValueError("alpha and beta must be non-negative")
        for name in ("learning_rate", "batch_size", "max_epochs", "patience"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        for name in ("keep_prob_users", "keep_prob_items"):
            p = getattr(self, name)
            if not 0.0 < p <= 1.0:
                raise ValueError(f"{name} must be in (0, 1], got {p}")
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if self.final_embedding not in FINAL_EMBEDDINGS:
            raise ValueError(f"final_embedding must be one of {FINAL_EMBEDDINGS}")
        if self.loss_form not in LOSS_FORMS:
            raise ValueError(f"loss_form must be one of {LOSS_FORMS}")
        if self.dtype not in DTYPES:
            raise ValueError(f"dtype must be one of {DTYPES}")
        return self

    @property
    def final_dim(self) -> int:
        """Width of a final node embedding: d, or L*d when layers are concatenated."""
        return self.dim * (self.layers if self.final_embedding == "concat_layers" else 1)

    def with_overrides(self, **kwargs) -> "TrainConfig":
        return replace(self, **kwargs).validate()

    def to_text(self) -> str:
        lines = []
        for f in fields(self):
            value = getattr(self, f.name)
            if isinstance(value, bool):
                value = "true" if value else "false"
            lines.append(f"{f.name}={value}")
        return "\n".join(lines) + "\n"


def _coerce(raw: str, ftype: type):
    if ftype is bool:
        if raw.lower() in ("true", "1", "yes"):
            return True
        if raw.lower() in ("false", "0", "no"):
            return False
        raise ValueError(f"expected boolean, got {raw!r}")
    return ftype(raw)


def parse_config_text(text: str) -> TrainConfig:
    known = {f.name: f.type for f in fields(TrainConfig)}
    types = {"int": int, "float": float, "str": str, "bool": bool}
    values = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, raw = line.partition("=")
        key, raw = key.strip(), raw.strip()
        if not sep:
            raise ValueError(f"config line {lineno}: expected key=value, got {line!r}")
        if key not in known:
            raise ValueError(f"config line {lineno}: unknown key {key!r}")
        values[key] = _coerce(raw, types[known[key]])
    return TrainConfig(**values).validate()


def read_config(path: str | Path) -> TrainConfig:
    return parse_config_text(Path(path).read_text(encoding="utf-8"))


def write_config(cfg: TrainConfig, path: str | Path) -> None:
    Path(path).write_text(cfg.to_text(), encoding="utf-8")
