"""A tiny randomly initialized encoder so tests run without downloads."""

from pathlib import Path

VOCAB = [
    "[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]",
    "toy", "review", "about", "thing", "empty", "good", "bad", "fine",
    "0", "1", "2", "3", "4", "5", "6", "7", "8", "9",
]
HIDDEN = 16


def _tiny_tokenizer():
    from tokenizers import Tokenizer
    from tokenizers.models import WordPiece
    from tokenizers.normalizers import BertNormalizer
    from tokenizers.pre_tokenizers import BertPreTokenizer
    from tokenizers.processors import TemplateProcessing
    from transformers import PreTrainedTokenizerFast

    vocab = {word: idx for idx, word in enumerate(VOCAB)}
    tk = Tokenizer(WordPiece(vocab=vocab, unk_token="[UNK]"))
    tk.normalizer = BertNormalizer(lowercase=True)
    tk.pre_tokenizer = BertPreTokenizer()
    tk.post_processor = TemplateProcessing(
        single="[CLS] $A [SEP]",
        pair="[CLS] $A [SEP] $B [SEP]",
        special_tokens=[("[CLS]", vocab["[CLS]"]), ("[SEP]", vocab["[SEP]"])],
    )
    return PreTrainedTokenizerFast(
        tokenizer_object=tk, unk_token="[UNK]", pad_token="[PAD]",
        cls_token="[CLS]", sep_token="[SEP]", mask_token="[MASK]",
        model_max_length=64,
    )


def build_tiny_encoder(target_dir: str | Path) -> str:
    """Save a seeded one-layer transformer + wordpiece vocab under target_dir."""
    import torch
    from transformers import BertConfig, BertModel

    target = Path(target_dir)
    target.mkdir(parents=True, exist_ok=True)
    torch.manual_seed(0)
    config = BertConfig(
        vocab_size=len(VOCAB), hidden_size=HIDDEN, num_hidden_layers=1,
        num_attention_heads=2, intermediate_size=32,
        max_position_embeddings=64,
    )
    BertModel(config).save_pretrained(target)
    _tiny_tokenizer().save_pretrained(target)
    return str(target)


def ensure_tiny_encoder() -> str:
    """Build the tiny encoder under a cache directory once and reuse it."""
    cache = Path.home() / ".cache" / "review-export" / "tiny-encoder"
    if not (cache / "config.json").exists():
        build_tiny_encoder(cache)
    return str(cache)
