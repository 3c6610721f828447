"""Toy word-level text encoding over a fixed vocabulary.

The vocabulary covers the dataset prompt templates ("a [vcp]", "a [stp]",
"a [vcp] in [stv] style") plus a handful of generic words for edited prompts.
"""

from __future__ import annotations

import torch

VOCAB = (
    "<pad>",
    "<unk>",
    "a",
    "in",
    "style",
    "[vcp]",
    "[stp]",
    "[stv]",
    "red",
    "green",
    "blue",
    "bright",
    "dark",
    "photo",
    "drawing",
    "painting",
    "sketch",
    "pattern",
    "shape",
    "scene",
)

PAD_ID = 0
UNK_ID = 1

CONTENT_PROMPT = "a [vcp]"
STYLE_PROMPT = "a [stp]"
COMBINED_PROMPT = "a [vcp] in [stv] style"


class TextTokenizer:
    """Whitespace tokenizer with padding/truncation to a fixed length."""

    def __init__(self, max_len: int = 8):
        self.max_len = max_len
        self._ids = {w: i for i, w in enumerate(VOCAB)}

    @property
    def vocab_size(self) -> int:
        return len(VOCAB)

    def encode(self, text: str) -> torch.Tensor:
        words = text.lower().split()
        ids = [self._ids.get(w, UNK_ID) for w in words[: self.max_len]]
        ids += [PAD_ID] * (self.max_len - len(ids))
        return torch.tensor(ids, dtype=torch.long)

    def encode_batch(self, texts: list[str]) -> torch.Tensor:
        return torch.stack([self.encode(t) for t in texts])
