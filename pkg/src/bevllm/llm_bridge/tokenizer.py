"""Word-level tokenizer for the toy language model."""

from __future__ import annotations

import json
import re
from collections import Counter
from functools import lru_cache
from importlib import resources

PAD = "<pad>"
UNK = "<unk>"
BOT = "<|begin_of_text|>"
HEADER_OPEN = "<|start_header_id|>"
HEADER_CLOSE = "<|end_header_id|>"
EOT = "<|eot_id|>"
BEV = "<bev>"

_TOKEN_RE = re.compile(r"<\|[a-z_]+\|>|<[a-z]+>|[a-z0-9]+(?:'[a-z]+)?|[^\sa-z0-9]")
_NO_SPACE_BEFORE = re.compile(r" ([.,;:!?])")


@lru_cache(maxsize=1)
def special_token_registry() -> dict:
    """Stable ids for special tokens and role words, from the packaged registry file."""
    text = resources.files("bevllm").joinpath("assets/special_tokens.json").read_text()
    return json.loads(text)


def split_words(text: str) -> list[str]:
    return _TOKEN_RE.findall(text.lower())


class WordTokenizer:
    def __init__(self, vocab: list[str]):
        registry = special_token_registry()
        fixed = {**registry["special"], **registry["roles"]}
        for tok, idx in fixed.items():
            if idx >= len(vocab) or vocab[idx] != tok:
                raise ValueError(f"vocabulary must place {tok!r} at id {idx}")
        if len(set(vocab)) != len(vocab):
            raise ValueError("duplicate entries in vocabulary")
        self.vocab = list(vocab)
        self.index = {tok: i for i, tok in enumerate(self.vocab)}
        self.special_ids = frozenset(registry["special"].values())

    @classmethod
    def build(cls, texts, max_size: int = 2048) -> "WordTokenizer":
        """Fixed entries first, then words by descending frequency, ties lexicographic."""
        registry = special_token_registry()
        fixed = sorted({**registry["special"], **registry["roles"]}.items(), key=lambda kv: kv[1])
        vocab = [tok for tok, _ in fixed]
        counts = Counter(w for t in texts for w in split_words(t) if w not in registry["special"])
        words = sorted((w for w in counts if w not in vocab), key=lambda w: (-counts[w], w))
        vocab.extend(words[: max(0, max_size - len(vocab))])
        return cls(vocab)

    def __len__(self) -> int:
        return len(self.vocab)

    def id_of(self, token: str) -> int:
        return self.index[token]

    @property
    def pad_id(self) -> int:
        return self.index[PAD]

    @property
    def eot_id(self) -> int:
        return self.index[EOT]

    @property
    def bev_id(self) -> int:
        return self.index[BEV]

    def encode(self, text: str) -> list[int]:
        unk = self.index[UNK]
        return [self.index.get(w, unk) for w in split_words(text)]

    def decode(self, ids, skip_special: bool = True) -> str:
        words = [self.vocab[i] for i in ids if not (skip_special and i in self.special_ids)]
        return _NO_SPACE_BEFORE.sub(r"\1", " ".join(words))
