"""Partition of the BEV raster into six camera view sectors around the ego vehicle.

Sector indices run clockwise from the vehicle front::

    0 FRONT, 1 FRONT_RIGHT, 2 BACK_RIGHT, 3 BACK, 4 BACK_LEFT, 5 FRONT_LEFT

Angles are measured at cell centres relative to the ego position, from the
forward axis, clockwise positive. Sector boundaries are half-open.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, InputDomainError

NUM_VIEWS = 6
SECTOR_WIDTH_DEG = 360.0 / NUM_VIEWS
VIEW_NAMES = ("front", "front right", "back right", "back", "back left", "front left")

# (row step, col step) of a unit move towards the vehicle front, and of a unit
# move to the vehicle's right, for each supported forward direction.
_AXES = {
    "-row": ((-1, 0), (0, 1)),
    "+row": ((1, 0), (0, -1)),
    "+col": ((0, 1), (1, 0)),
    "-col": ((0, -1), (-1, 0)),
}


@dataclass(frozen=True)
class GridSpec:
    height: int = 180
    width: int = 180
    ego_row: float | None = None
    ego_col: float | None = None
    forward_axis: str = "-row"
    sector_offset_deg: float = -30.0

    def __post_init__(self):
        if self.height <= 0 or self.width <= 0:
            raise ConfigurationError(f"grid must be non-empty, got {self.height}x{self.width}")
        if self.ego_row is None:
            object.__setattr__(self, "ego_row", (self.height - 1) / 2)
        if self.ego_col is None:
            object.__setattr__(self, "ego_col", (self.width - 1) / 2)
        if not (0 <= self.ego_row <= self.height - 1 and 0 <= self.ego_col <= self.width - 1):
            raise ConfigurationError(
                f"ego position ({self.ego_row}, {self.ego_col}) outside {self.height}x{self.width} raster"
            )
        if self.forward_axis not in _AXES:
            raise ConfigurationError(f"forward_axis must be one of {sorted(_AXES)}, got {self.forward_axis!r}")
        if not -60.0 <= self.sector_offset_deg < 60.0:
            raise ConfigurationError(f"sector_offset_deg must lie in [-60, 60), got {self.sector_offset_deg}")

    @property
    def num_cells(self) -> int:
        return self.height * self.width


def _cell_angle_deg(row, col, grid: GridSpec):
    (fr, fc), (rr, rc) = _AXES[grid.forward_axis]
    dr = row - grid.ego_row
    dc = col - grid.ego_col
    ahead = dr * fr + dc * fc
    right = dr * rr + dc * rc
    return ahead, right


def sector_of_angle(theta_deg: float, offset_deg: float = -30.0) -> int:
    """Sector index of a clockwise-from-forward angle in degrees."""
    return int(((theta_deg - offset_deg) % 360.0) // SECTOR_WIDTH_DEG) % NUM_VIEWS


def sector_of_cell(row: int, col: int, grid: GridSpec) -> int:
    if not (0 <= row < grid.height and 0 <= col < grid.width):
        raise InputDomainError(f"cell ({row}, {col}) outside {grid.height}x{grid.width} raster")
    ahead, right = _cell_angle_deg(row, col, grid)
    if ahead == 0 and right == 0:
        return 0
    theta = math.degrees(math.atan2(right, ahead))
    return sector_of_angle(theta, grid.sector_offset_deg)


@dataclass(frozen=True)
class ViewClassificationMap:
    grid: GridSpec
    cells: np.ndarray = field(repr=False)

    def __post_init__(self):
        if self.cells.shape != (self.grid.height, self.grid.width):
            raise InputDomainError(
                f"cells shape {self.cells.shape} does not match grid {self.grid.height}x{self.grid.width}"
            )
        self.cells.setflags(write=False)

    def histogram(self) -> np.ndarray:
        return np.bincount(self.cells.ravel(), minlength=NUM_VIEWS)


def build_view_map(grid: GridSpec) -> ViewClassificationMap:
    rows, cols = np.mgrid[0 : grid.height, 0 : grid.width]
    ahead, right = _cell_angle_deg(rows.astype(np.float64), cols.astype(np.float64), grid)
    theta = np.degrees(np.arctan2(right, ahead))
    cells = (np.floor_divide(np.mod(theta - grid.sector_offset_deg, 360.0), SECTOR_WIDTH_DEG) % NUM_VIEWS)
    cells = cells.astype(np.int32)
    cells[(ahead == 0) & (right == 0)] = 0
    return ViewClassificationMap(grid=grid, cells=cells)


def view_mask(view_map: ViewClassificationMap, v: int) -> np.ndarray:
    if v not in range(NUM_VIEWS):
        raise InputDomainError(f"view index must be in 0..5, got {v}")
    return view_map.cells == v
