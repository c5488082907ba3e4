"""Positional Q-Former: a learnable query bank that cross-attends to BEV features.

The layout follows the BLIP-2 Q-Former. Queries and text share the
self-attention of every layer, only queries take the cross-attention to the
(positionally encoded) BEV cells, and the two streams have separate
feed-forward blocks. Post-LN residuals as in BERT.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
import torch.nn.functional as F
from torch import nn

from .errors import ConfigurationError, InputDomainError, NumericError, ShapeError
from .pos_encoding import BevFeatureMap


@dataclass
class QFormerConfig:
    bev_channels: int = 32
    num_queries: int = 8
    d_q: int = 32
    num_layers: int = 2
    num_heads: int = 2
    cross_attention_every: int = 1
    vocab_size: int = 128
    max_text_len: int = 32
    ffn_mult: int = 4
    seed: int = 0
    init_weights: str = ""  # reserved: path to external weights, unsupported at desk scale

    def validate(self) -> None:
        if self.num_queries <= 0 or self.num_layers <= 0:
            raise ConfigurationError("num_queries and num_layers must be positive")
        if self.num_heads <= 0 or self.d_q % self.num_heads:
            raise ConfigurationError(f"d_q={self.d_q} not divisible by num_heads={self.num_heads}")
        if self.cross_attention_every <= 0:
            raise ConfigurationError("cross_attention_every must be positive")
        if self.bev_channels <= 0 or self.vocab_size <= 0 or self.max_text_len <= 0:
            raise ConfigurationError("bev_channels, vocab_size and max_text_len must be positive")
        if self.init_weights:
            raise ConfigurationError("loading external Q-Former weights is not supported")


def attention(q, k, v, mask=None, return_weights=False):
    """Scaled dot-product attention over ``(..., L, d)`` tensors.

    ``mask`` is boolean, True where attending is allowed. The fused kernel is
    used unless the weights are requested.
    """
    if not return_weights:
        return F.scaled_dot_product_attention(q, k, v, attn_mask=mask), None
    scores = q @ k.transpose(-1, -2) / math.sqrt(q.shape[-1])
    if mask is not None:
        scores = scores.masked_fill(~mask, float("-inf"))
    weights = scores.softmax(dim=-1)
    return weights @ v, weights


class MultiHeadAttention(nn.Module):
    def __init__(self, dim, num_heads, kv_dim=None):
        super().__init__()
        kv_dim = kv_dim or dim
        self.num_heads = num_heads
        self.q = nn.Linear(dim, dim)
        self.k = nn.Linear(kv_dim, dim)
        self.v = nn.Linear(kv_dim, dim)
        self.o = nn.Linear(dim, dim)

    def _split(self, x):
        b, n, d = x.shape
        return x.view(b, n, self.num_heads, d // self.num_heads).transpose(1, 2)

    def forward(self, x, kv=None, mask=None, return_weights=False):
        kv = x if kv is None else kv
        q, k, v = self._split(self.q(x)), self._split(self.k(kv)), self._split(self.v(kv))
        if mask is not None and mask.dim() == 3:
            mask = mask[:, None]
        out, weights = attention(q, k, v, mask, return_weights)
        b, _, n, _ = out.shape
        return self.o(out.transpose(1, 2).reshape(b, n, -1)), weights


class FeedForward(nn.Module):
    def __init__(self, dim, hidden):
        super().__init__()
        self.up = nn.Linear(dim, hidden)
        self.down = nn.Linear(hidden, dim)
        self.norm = nn.LayerNorm(dim)

    def forward(self, x):
        return self.norm(x + self.down(F.gelu(self.up(x))))


class QFormerLayer(nn.Module):
    def __init__(self, cfg: QFormerConfig, has_cross: bool):
        super().__init__()
        d = cfg.d_q
        self.self_attn = MultiHeadAttention(d, cfg.num_heads)
        self.self_norm = nn.LayerNorm(d)
        self.cross_attn = MultiHeadAttention(d, cfg.num_heads) if has_cross else None
        self.cross_norm = nn.LayerNorm(d) if has_cross else None
        self.query_ffn = FeedForward(d, cfg.ffn_mult * d)
        self.text_ffn = FeedForward(d, cfg.ffn_mult * d)

    def forward(self, h, num_queries, self_mask=None, bev=None, record=None):
        a, w = self.self_attn(h, mask=self_mask, return_weights=record is not None)
        h = self.self_norm(h + a)
        if record is not None:
            record.append(("self", w))
        queries, text = h[:, :num_queries], h[:, num_queries:]
        if num_queries:
            if self.cross_attn is not None and bev is not None:
                c, w = self.cross_attn(queries, kv=bev, return_weights=record is not None)
                queries = self.cross_norm(queries + c)
                if record is not None:
                    record.append(("cross", w))
            queries = self.query_ffn(queries)
        if text.shape[1]:
            text = self.text_ffn(text)
        return torch.cat([queries, text], dim=1)


class QFormer(nn.Module):
    """Query bank, BEV input projection, shared transformer stack and the text heads."""

    def __init__(self, cfg: QFormerConfig):
        super().__init__()
        cfg.validate()
        self.config = cfg
        d = cfg.d_q
        self.query_bank = nn.Parameter(torch.zeros(cfg.num_queries, d))
        self.bev_proj = nn.Linear(cfg.bev_channels, d)
        self.word_emb = nn.Embedding(cfg.vocab_size, d)
        self.pos_emb = nn.Embedding(cfg.max_text_len, d)
        self.emb_norm = nn.LayerNorm(d)
        self.layers = nn.ModuleList(
            QFormerLayer(cfg, has_cross=(i % cfg.cross_attention_every == 0)) for i in range(cfg.num_layers)
        )
        self.lm_head = nn.Linear(d, cfg.vocab_size)
        self.match_head = nn.Linear(d, 1)

    # -- inputs -------------------------------------------------------------

    def project_bev(self, features) -> torch.Tensor:
        """``(B, C, N)`` / ``(C, N)`` / BevFeatureMap -> ``(B, N, d_q)`` keys/values."""
        if isinstance(features, BevFeatureMap):
            features = features.flattened()
        if features.dim() == 2:
            features = features[None]
        if features.dim() != 3 or features.shape[1] != self.config.bev_channels:
            raise ShapeError(
                f"expected (B, {self.config.bev_channels}, N) features, got {tuple(features.shape)}"
            )
        return self.bev_proj(features.transpose(1, 2))

    def embed_text(self, token_ids: torch.Tensor) -> torch.Tensor:
        if token_ids.dim() == 1:
            token_ids = token_ids[None]
        if token_ids.shape[1] == 0:
            raise InputDomainError("text must contain at least one token")
        if token_ids.shape[1] > self.config.max_text_len:
            raise InputDomainError(f"text length {token_ids.shape[1]} exceeds max_text_len={self.config.max_text_len}")
        if token_ids.min() < 0 or token_ids.max() >= self.config.vocab_size:
            raise InputDomainError(f"token id outside vocabulary of size {self.config.vocab_size}")
        pos = torch.arange(token_ids.shape[1], device=token_ids.device)
        return self.emb_norm(self.word_emb(token_ids) + self.pos_emb(pos)[None])

    # -- stack --------------------------------------------------------------

    def run(self, queries, text, self_mask=None, bev=None, record=None):
        num_queries = 0 if queries is None else queries.shape[1]
        parts = [x for x in (queries, text) if x is not None]
        h = torch.cat(parts, dim=1)
        for i, layer in enumerate(self.layers):
            h = layer(h, num_queries, self_mask, bev, record)
            if not torch.isfinite(h).all():
                raise NumericError(f"non-finite activations after Q-Former layer {i}")
        return h[:, :num_queries], h[:, num_queries:]

    def _queries(self, batch):
        return self.query_bank[None].expand(batch, -1, -1)

    # -- public forwards ----------------------------------------------------

    def encode_bev(self, features, record=None) -> torch.Tensor:
        """Query embeddings, ``(B, num_queries, d_q)`` (unbatched input gives 2-D output)."""
        unbatched = isinstance(features, BevFeatureMap) or features.dim() == 2
        bev = self.project_bev(features)
        q, _ = self.run(self._queries(bev.shape[0]), None, bev=bev, record=record)
        return q[0] if unbatched else q

    def encode_text(self, token_ids, attention_mask=None, causal=False, record=None):
        """Return ``(pooled, states)``; pooled is the first-token state."""
        token_ids = torch.as_tensor(token_ids)
        unbatched = token_ids.dim() == 1
        emb = self.embed_text(token_ids)
        b, n, _ = emb.shape
        if attention_mask is None:
            attention_mask = torch.ones(b, n, dtype=torch.bool)
        mask = attention_mask.bool()[:, None, :].expand(b, n, n)
        if causal:
            mask = mask & torch.ones(n, n, dtype=torch.bool).tril()[None]
        _, states = self.run(None, emb, self_mask=mask, record=record)
        pooled = states[:, 0]
        return (pooled[0], states[0]) if unbatched else (pooled, states)

    def text_generation_logits(self, features, token_ids, attention_mask):
        """Text-branch logits under the multimodal causal mask.

        Queries see only queries; text sees every query plus itself causally.
        Position ``t`` predicts token ``t + 1``.
        """
        bev = self.project_bev(features)
        emb = self.embed_text(token_ids)
        mask = multimodal_mask(self.config.num_queries, attention_mask.bool(), causal=True)
        _, states = self.run(self._queries(bev.shape[0]), emb, self_mask=mask, bev=bev)
        return self.lm_head(states)

    def match_logits(self, features, token_ids, attention_mask):
        """One binary matching logit per pair: mean of per-query head outputs."""
        bev = self.project_bev(features)
        emb = self.embed_text(token_ids)
        mask = multimodal_mask(self.config.num_queries, attention_mask.bool(), causal=False)
        q, _ = self.run(self._queries(bev.shape[0]), emb, self_mask=mask, bev=bev)
        return self.match_head(q).squeeze(-1).mean(dim=1)


def multimodal_mask(num_queries: int, text_mask: torch.Tensor, causal: bool) -> torch.Tensor:
    """Boolean ``(B, Q+L, Q+L)`` self-attention mask over [queries; text]."""
    b, n = text_mask.shape
    total = num_queries + n
    mask = torch.zeros(b, total, total, dtype=torch.bool)
    mask[:, :num_queries, :num_queries] = True
    if causal:
        mask[:, num_queries:, :num_queries] = True
        text_part = torch.ones(n, n, dtype=torch.bool).tril()[None] & text_mask[:, None, :]
    else:
        mask[:, :num_queries, num_queries:] = text_mask[:, None, :]
        mask[:, num_queries:, :num_queries] = True
        text_part = text_mask[:, None, :].expand(b, n, n)
    mask[:, num_queries:, num_queries:] = text_part
    return mask


def init_qformer(config: QFormerConfig, dtype: torch.dtype = torch.float32) -> QFormer:
    """Seeded BERT-style init: N(0, 0.02) weights, zero biases, unit LayerNorms."""
    config.validate()
    gen = torch.Generator().manual_seed(config.seed)
    model = QFormer(config)
    with torch.no_grad():
        for name, p in model.named_parameters():
            if name.endswith("bias"):
                p.zero_()
            elif ".norm" in name or name.startswith("emb_norm") or "_norm." in name:
                p.fill_(1.0)
            else:
                p.copy_(torch.randn(p.shape, generator=gen) * 0.02)
    return model.to(dtype)


