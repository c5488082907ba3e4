"""View-aware BEV scene captioning at desk scale."""

from .bev_partition import GridSpec, ViewClassificationMap, build_view_map, sector_of_cell, view_mask
from .pos_encoding import (
    BevFeatureMap,
    PositionalEncodingMap,
    apply_positional_encoding,
    build_positional_map,
    sinusoidal_encode,
)
from .qformer import QFormer, QFormerConfig, init_qformer

__version__ = "0.1.0"

__all__ = [
    "BevFeatureMap",
    "GridSpec",
    "PositionalEncodingMap",
    "QFormer",
    "QFormerConfig",
    "ViewClassificationMap",
    "apply_positional_encoding",
    "build_positional_map",
    "build_view_map",
    "init_qformer",
    "sector_of_cell",
    "sinusoidal_encode",
    "view_mask",
]
