"""Batched sentence encoding with a locally available pretrained transformer."""

import numpy as np

POOLINGS = ("mean", "cls")


def load_encoder(name: str):
    """Tokenizer + model (eval mode) for a model name or local directory."""
    import torch
    from transformers import AutoModel, AutoTokenizer

    try:
        tokenizer = AutoTokenizer.from_pretrained(name)
        model = AutoModel.from_pretrained(name)
    except Exception as exc:
        raise ValueError(f"cannot load encoder {name!r}: {exc}") from exc
    model.eval()
    torch.set_grad_enabled(False)
    return tokenizer, model


def pool_hidden(hidden, mask, pooling: str):
    """One vector per sequence: masked token mean, or the first-token state."""
    if pooling == "mean":
        weights = mask.unsqueeze(-1).to(hidden.dtype)
        return (hidden * weights).sum(dim=1) / weights.sum(dim=1).clamp(min=1.0)
    if pooling == "cls":
        return hidden[:, 0]
    raise ValueError(f"pooling must be one of {POOLINGS}, got {pooling!r}")


def encode_texts(texts: list[str], tokenizer, model, pooling: str,
                 batch_size: int) -> np.ndarray:
    """float32 (len(texts), raw_dim) rows, preserving input order."""
    if pooling not in POOLINGS:
        raise ValueError(f"pooling must be one of {POOLINGS}, got {pooling!r}")
    if batch_size < 1:
        raise ValueError(f"batch size must be positive, got {batch_size}")
    chunks = []
    for start in range(0, len(texts), batch_size):
        batch = tokenizer(
            texts[start : start + batch_size],
            padding=True, truncation=True, return_tensors="pt",
        )
        hidden = model(**batch).last_hidden_state
        pooled = pool_hidden(hidden, batch["attention_mask"], pooling)
        chunks.append(pooled.numpy().astype(np.float32))
    if not chunks:
        return np.zeros((0, model.config.hidden_size), dtype=np.float32)
    return np.concatenate(chunks, axis=0)
