"""Single-frame top view from depth plus per-pixel class distributions.

Camera convention: x right, y down, z forward (pinhole). For a camera mounted
height_m above flat ground, a point's height above ground is height_m - Y.
Cells aggregate the mean distribution of the points that land in them; points
outside the grid extent or outside the ground band are dropped.
"""

from dataclasses import dataclass

import numpy as np

from .grid import GridSpec, TopViewMap

GROUND_BAND_M = 0.5


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    height_m: float = 1.5


def backproject(depth: np.ndarray, sem: np.ndarray, cam: CameraIntrinsics):
    """Lift pixels to camera-frame points.

    depth: (h, w) meters, non-positive or non-finite entries are skipped.
    sem:   (h, w, C) per-pixel class distributions; all-zero pixels are void
           and skipped as well.
    Returns (points (N, 3) camera frame, dists (N, C)).
    """
    depth = np.asarray(depth, dtype=np.float64)
    sem = np.asarray(sem, dtype=np.float64)
    if depth.ndim != 2 or sem.ndim != 3 or sem.shape[:2] != depth.shape:
        raise ValueError(
            "depth %s and semantics %s resolutions do not match"
            % (depth.shape, sem.shape)
        )
    h, w = depth.shape
    keep = np.isfinite(depth) & (depth > 0.0) & (sem.max(axis=2) > 0.0)
    v, u = np.nonzero(keep)
    d = depth[v, u]
    x = (u - cam.cx) * d / cam.fx
    y = (v - cam.cy) * d / cam.fy
    points = np.stack([x, y, d], axis=1)
    return points, sem[v, u]


def camera_to_ground(points: np.ndarray, cam: CameraIntrinsics) -> np.ndarray:
    """Camera-frame points to (x, z, height-above-ground) triples."""
    points = np.asarray(points, dtype=np.float64)
    out = np.empty_like(points)
    out[:, 0] = points[:, 0]
    out[:, 1] = points[:, 2]
    out[:, 2] = cam.height_m - points[:, 1]
    return out


def rasterize_topview(ground_xz: np.ndarray, dists: np.ndarray, grid: GridSpec) -> TopViewMap:
    """Mean class distribution per cell; points off the grid are dropped."""
    ground_xz = np.asarray(ground_xz, dtype=np.float64)
    dists = np.asarray(dists, dtype=np.float64)
    if len(ground_xz) != len(dists):
        raise ValueError("point and distribution counts differ")
    n_classes = dists.shape[1] if dists.ndim == 2 else 0
    out = TopViewMap.zeros(grid, n_classes if n_classes else 1)
    if len(ground_xz) == 0:
        return out
    row, col = grid.xz_to_rowcol(ground_xz[:, 0], ground_xz[:, 1])
    ok = grid.in_bounds(row, col)
    if not ok.any():
        return out
    flat = row[ok] * grid.width_px + col[ok]
    sums = np.zeros((grid.height_px * grid.width_px, n_classes))
    np.add.at(sums, flat, dists[ok])
    counts = np.bincount(flat, minlength=grid.height_px * grid.width_px)
    filled = counts > 0
    sums[filled] /= counts[filled, None]
    out.data[:] = sums.reshape(grid.height_px, grid.width_px, n_classes)
    return out


def local_bev(
    depth: np.ndarray,
    sem: np.ndarray,
    cam: CameraIntrinsics,
    grid: GridSpec = None,
    ground_band_m: float = GROUND_BAND_M,
) -> TopViewMap:
    """Full single-frame pipeline: lift, ground-align, band-filter, rasterize."""
    if grid is None:
        grid = GridSpec()
    points, dists = backproject(depth, sem, cam)
    ground = camera_to_ground(points, cam)
    near = np.abs(ground[:, 2]) <= ground_band_m
    return rasterize_topview(ground[near, :2], dists[near], grid)
