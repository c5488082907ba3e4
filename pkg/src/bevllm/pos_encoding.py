"""Fixed sinusoidal encoding of view indices and its fusion with BEV features."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch

from .bev_partition import NUM_VIEWS, GridSpec, ViewClassificationMap
from .errors import ConfigurationError, InputDomainError, ShapeError

BASE = 10000.0


def sinusoidal_encode(v: int, d_pos: int = 512) -> np.ndarray:
    """Encode view index ``v`` as ``[sin(v w_0), cos(v w_0), sin(v w_1), ...]``.

    ``w_i = BASE ** (-2i / d_pos)``. Computed in float64.
    """
    if d_pos <= 0 or d_pos % 2:
        raise ConfigurationError(f"d_pos must be a positive even integer, got {d_pos}")
    if v not in range(NUM_VIEWS):
        raise InputDomainError(f"view index must be in 0..5, got {v}")
    return _encoding_table(d_pos)[v].copy()


def _encoding_table(d_pos: int) -> np.ndarray:
    i = np.arange(d_pos // 2, dtype=np.float64)
    freqs = BASE ** (-2.0 * i / d_pos)
    angles = np.arange(NUM_VIEWS, dtype=np.float64)[:, None] * freqs[None, :]
    table = np.empty((NUM_VIEWS, d_pos), dtype=np.float64)
    table[:, 0::2] = np.sin(angles)
    table[:, 1::2] = np.cos(angles)
    return table


@dataclass(frozen=True)
class PositionalEncodingMap:
    d_pos: int
    grid: GridSpec
    values: torch.Tensor = field(repr=False)  # d_pos x H x W


@dataclass(frozen=True)
class BevFeatureMap:
    grid: GridSpec
    values: torch.Tensor = field(repr=False)  # C x H x W

    def __post_init__(self):
        if self.values.dim() != 3 or tuple(self.values.shape[1:]) != (self.grid.height, self.grid.width):
            raise ShapeError(
                f"feature tensor {tuple(self.values.shape)} does not match grid {self.grid.height}x{self.grid.width}"
            )

    @property
    def channels(self) -> int:
        return self.values.shape[0]

    def flattened(self) -> torch.Tensor:
        """C x (H*W) view, row-major over cells."""
        return self.values.reshape(self.channels, -1)


def build_positional_map(
    view_map: ViewClassificationMap, d_pos: int = 512, dtype: torch.dtype = torch.float32
) -> PositionalEncodingMap:
    if d_pos <= 0 or d_pos % 2:
        raise ConfigurationError(f"d_pos must be a positive even integer, got {d_pos}")
    table = torch.from_numpy(_encoding_table(d_pos))  # 6 x d_pos, float64
    idx = torch.from_numpy(view_map.cells.astype(np.int64))
    values = table[idx].permute(2, 0, 1).to(dtype).contiguous()
    return PositionalEncodingMap(d_pos=d_pos, grid=view_map.grid, values=values)


def apply_positional_encoding(features: BevFeatureMap, pos: PositionalEncodingMap) -> BevFeatureMap:
    if features.channels != pos.d_pos:
        raise ShapeError(f"feature channels {features.channels} != encoding width {pos.d_pos}")
    if features.grid != pos.grid:
        raise ShapeError(f"grid mismatch: {features.grid} vs {pos.grid}")
    return BevFeatureMap(grid=features.grid, values=features.values + pos.values.to(features.values.dtype))
