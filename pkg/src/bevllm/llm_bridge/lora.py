"""Low-rank adapters on frozen linear maps: ``W x + (alpha / r) B (A x)``."""

from __future__ import annotations

import math

import torch
from torch import nn

from ..errors import ConfigurationError, ShapeError


class LoraAdapter(nn.Module):
    def __init__(self, in_features: int, out_features: int, rank: int = 4, alpha: float = 8.0,
                 generator: torch.Generator | None = None):
        super().__init__()
        if rank <= 0 or rank > min(in_features, out_features):
            raise ConfigurationError(f"LoRA rank {rank} invalid for a {out_features}x{in_features} matrix")
        self.rank = rank
        self.alpha = alpha
        bound = 1.0 / math.sqrt(in_features)
        a = (torch.rand(rank, in_features, generator=generator) * 2 - 1) * bound
        self.A = nn.Parameter(a)
        self.B = nn.Parameter(torch.zeros(out_features, rank))

    @property
    def scaling(self) -> float:
        return self.alpha / self.rank

    def delta(self, x: torch.Tensor) -> torch.Tensor:
        return self.scaling * ((x @ self.A.T) @ self.B.T)

    def dense_delta(self) -> torch.Tensor:
        return self.scaling * (self.B @ self.A)


def lora_apply(base: torch.Tensor, adapter: LoraAdapter | None, x: torch.Tensor,
               bias: torch.Tensor | None = None) -> torch.Tensor:
    """Adapted linear map over the last axis of ``x``; ``base`` is never modified."""
    if x.shape[-1] != base.shape[1]:
        raise ShapeError(f"input width {x.shape[-1]} != base in-features {base.shape[1]}")
    out = x @ base.T
    if bias is not None:
        out = out + bias
    if adapter is None:
        return out
    if tuple(adapter.B.shape[:1]) + tuple(adapter.A.shape[1:]) != tuple(base.shape):
        raise ShapeError("adapter shape does not match base matrix")
    return out + adapter.delta(x)


def make_adapters(lm, rank: int = 4, alpha: float = 8.0, seed: int = 0,
                  targets=("q", "v")) -> nn.ModuleDict:
    """One adapter per targeted attention projection of every LM block."""
    gen = torch.Generator().manual_seed(seed)
    adapters = nn.ModuleDict()
    for i, block in enumerate(lm.blocks):
        for t in targets:
            lin = getattr(block, t)
            adapters[f"block{i}_{t}"] = LoraAdapter(lin.in_features, lin.out_features, rank, alpha, gen)
    dtype = lm.tok_emb.weight.dtype
    return adapters.to(dtype)
