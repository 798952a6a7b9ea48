"""Metric top-view grid and per-cell class maps.

The grid covers a rectangle of ground ahead of the ego vehicle. Row 0 is the
far edge, the last row touches the ego position, and the ego sits at the
bottom-center cell boundary. Lateral x grows to the right, forward z grows
away from the ego.
"""

from dataclasses import dataclass, field

import numpy as np

CLASS_ROAD = 0
CLASS_SIDEWALK = 1
CLASS_LANE = 2
CLASS_CROSSWALK = 3
CLASS_OBJECT = 4

BACKGROUND_CLASSES = 4
VOID_LABEL = -1

CLASS_NAMES = ("road", "sidewalk", "lane", "crosswalk", "object")

# RGB palette for PNG export; void renders black.
CLASS_COLORS = {
    CLASS_ROAD: (128, 128, 128),
    CLASS_SIDEWALK: (70, 130, 180),
    CLASS_LANE: (255, 255, 255),
    CLASS_CROSSWALK: (255, 215, 0),
    CLASS_OBJECT: (0, 200, 0),
}


@dataclass(frozen=True)
class GridSpec:
    """Discretization of the ground rectangle in front of the ego."""

    height_px: int = 128
    width_px: int = 64
    extent_length_m: float = 60.0
    extent_width_m: float = 30.0

    def __post_init__(self):
        if self.height_px <= 0 or self.width_px <= 0:
            raise ValueError("grid dimensions must be positive")
        if self.extent_length_m <= 0 or self.extent_width_m <= 0:
            raise ValueError("grid extent must be positive")

    @property
    def cell_h(self) -> float:
        return self.extent_length_m / self.height_px

    @property
    def cell_w(self) -> float:
        return self.extent_width_m / self.width_px

    def scaled(self, height_px: int, width_px: int) -> "GridSpec":
        """Same metric extent on a different pixel grid."""
        return GridSpec(height_px, width_px, self.extent_length_m, self.extent_width_m)

    def cell_centers(self):
        """(x, z) center coordinates as (H, W) arrays."""
        cols = (np.arange(self.width_px) + 0.5) * self.cell_w - self.extent_width_m / 2.0
        rows = self.extent_length_m - (np.arange(self.height_px) + 0.5) * self.cell_h
        x = np.broadcast_to(cols[None, :], (self.height_px, self.width_px))
        z = np.broadcast_to(rows[:, None], (self.height_px, self.width_px))
        return x.copy(), z.copy()

    def xz_to_rowcol(self, x, z):
        """Map metric ground coordinates to integer cells; no bounds check."""
        col = np.floor((np.asarray(x) + self.extent_width_m / 2.0) / self.cell_w).astype(np.int64)
        row = np.floor((self.extent_length_m - np.asarray(z)) / self.cell_h).astype(np.int64)
        return row, col

    def in_bounds(self, row, col):
        return (row >= 0) & (row < self.height_px) & (col >= 0) & (col < self.width_px)


@dataclass
class TopViewMap:
    """Per-cell class distributions on a grid.

    data has shape (H, W, C) with values in [0, 1]; an all-zero cell is void.
    """

    grid: GridSpec
    data: np.ndarray = field(repr=False)

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        if self.data.ndim != 3:
            raise ValueError("map data must be (H, W, C)")
        if self.data.shape[:2] != (self.grid.height_px, self.grid.width_px):
            raise ValueError(
                "map shape %s does not match grid %dx%d"
                % (self.data.shape, self.grid.height_px, self.grid.width_px)
            )

    @classmethod
    def zeros(cls, grid: GridSpec, channels: int = BACKGROUND_CLASSES) -> "TopViewMap":
        return cls(grid, np.zeros((grid.height_px, grid.width_px, channels)))

    @property
    def channels(self) -> int:
        return self.data.shape[2]

    def labels(self) -> np.ndarray:
        """Hard per-cell labels; void cells return VOID_LABEL."""
        occupied = self.data.max(axis=2) > 0.0
        lab = np.argmax(self.data, axis=2)
        return np.where(occupied, lab, VOID_LABEL)

    def occupancy(self) -> np.ndarray:
        return self.data.max(axis=2) > 0.0

    def copy(self) -> "TopViewMap":
        return TopViewMap(self.grid, self.data.copy())


def labels_to_rgb(labels: np.ndarray) -> np.ndarray:
    """Palette rendering of a (H, W) label image to uint8 RGB."""
    rgb = np.zeros(labels.shape + (3,), dtype=np.uint8)
    for cls, color in CLASS_COLORS.items():
        rgb[labels == cls] = color
    return rgb
