"""A small seeded decoder-only LM standing in for the frozen instruction-tuned LLM."""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
import torch.nn.functional as F
from torch import nn

from ..qformer import attention
from .lora import lora_apply

EMB_STD = 0.125


@dataclass
class ToyLmConfig:
    vocab_size: int = 256
    d_model: int = 64
    num_layers: int = 2
    num_heads: int = 2
    max_len: int = 128
    ffn_mult: int = 4
    seed: int = 1234


class DecoderBlock(nn.Module):
    def __init__(self, d, num_heads, ffn_mult):
        super().__init__()
        self.num_heads = num_heads
        self.norm1 = nn.LayerNorm(d)
        self.q = nn.Linear(d, d)
        self.k = nn.Linear(d, d)
        self.v = nn.Linear(d, d)
        self.o = nn.Linear(d, d)
        self.norm2 = nn.LayerNorm(d)
        self.up = nn.Linear(d, ffn_mult * d)
        self.down = nn.Linear(ffn_mult * d, d)

    def _proj(self, name, x, adapters, prefix):
        lin = getattr(self, name)
        key = f"{prefix}_{name}"
        adapter = adapters[key] if adapters is not None and key in adapters else None
        return lora_apply(lin.weight, adapter, x, lin.bias)

    def _heads(self, x):
        b, n, d = x.shape
        return x.view(b, n, self.num_heads, d // self.num_heads).transpose(1, 2)

    def forward(self, x, mask, adapters=None, prefix=""):
        h = self.norm1(x)
        q = self._heads(self._proj("q", h, adapters, prefix))
        k = self._heads(self._proj("k", h, adapters, prefix))
        v = self._heads(self._proj("v", h, adapters, prefix))
        a, _ = attention(q, k, v, mask)
        b, _, n, _ = a.shape
        x = x + self.o(a.transpose(1, 2).reshape(b, n, -1))
        return x + self.down(F.gelu(self.up(self.norm2(x))))


class ToyFrozenLm(nn.Module):
    """Pre-LN causal decoder with an output head tied to the token embedding table.

    All parameters are created with ``requires_grad=False``.
    """

    def __init__(self, config: ToyLmConfig):
        super().__init__()
        self.config = config
        d = config.d_model
        self.tok_emb = nn.Embedding(config.vocab_size, d)
        self.pos_emb = nn.Embedding(config.max_len, d)
        self.blocks = nn.ModuleList(DecoderBlock(d, config.num_heads, config.ffn_mult) for _ in range(config.num_layers))
        self.norm_f = nn.LayerNorm(d)
        gen = torch.Generator().manual_seed(config.seed)
        with torch.no_grad():
            for name, p in self.named_parameters():
                if "norm" in name:
                    p.fill_(1.0 if name.endswith("weight") else 0.0)
                elif name.endswith("bias"):
                    p.zero_()
                elif name.startswith(("tok_emb", "pos_emb")):
                    p.copy_(torch.randn(p.shape, generator=gen) * EMB_STD)
                else:
                    p.copy_(torch.randn(p.shape, generator=gen) / math.sqrt(p.shape[1]))
        self.requires_grad_(False)

    @property
    def embedding_table(self) -> torch.Tensor:
        return self.tok_emb.weight

    def embed(self, token_ids) -> torch.Tensor:
        return self.tok_emb(torch.as_tensor(token_ids))

    def forward(self, embeds: torch.Tensor, adapters=None) -> torch.Tensor:
        """``(B, L, d)`` input embeddings -> ``(B, L, V)`` next-token logits."""
        if embeds.dim() == 2:
            embeds = embeds[None]
        n = embeds.shape[1]
        if n > self.config.max_len:
            raise ValueError(f"sequence length {n} exceeds max_len={self.config.max_len}")
        x = embeds + self.pos_emb.weight[:n]
        mask = torch.ones(n, n, dtype=torch.bool, device=embeds.device).tril()
        for i, block in enumerate(self.blocks):
            x = block(x, mask, adapters, f"block{i}")
        return self.norm_f(x) @ self.tok_emb.weight.T
