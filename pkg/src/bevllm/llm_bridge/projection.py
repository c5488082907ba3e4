"""Two-layer MLP mapping query embeddings into the LM embedding space."""

from __future__ import annotations

import torch
import torch.nn.functional as F
from torch import nn

from ..errors import ShapeError


class ProjectionMlp(nn.Module):
    def __init__(self, d_q: int, d_llm: int, hidden: int | None = None, seed: int = 0):
        super().__init__()
        hidden = hidden or 4 * d_q
        self.fc1 = nn.Linear(d_q, hidden)
        self.fc2 = nn.Linear(hidden, d_llm)
        gen = torch.Generator().manual_seed(seed)
        with torch.no_grad():
            for lin in (self.fc1, self.fc2):
                bound = lin.in_features ** -0.5
                lin.weight.copy_((torch.rand(lin.weight.shape, generator=gen) * 2 - 1) * bound)
                lin.bias.zero_()

    @property
    def d_in(self) -> int:
        return self.fc1.in_features

    @property
    def d_out(self) -> int:
        return self.fc2.out_features

    def forward(self, q: torch.Tensor) -> torch.Tensor:
        return self.fc2(F.gelu(self.fc1(q)))


def project_queries(mlp: ProjectionMlp, q: torch.Tensor) -> torch.Tensor:
    if q.shape[-1] != mlp.d_in:
        raise ShapeError(f"query width {q.shape[-1]} != MLP input width {mlp.d_in}")
    return mlp(q)
