"""Sequence-level top view from a reconstructed, labeled point cloud.

Points vote with the argmax of the per-pixel class distribution in every frame
that sees them; the winning class (ties to the lowest index) becomes the point
label. A RANSAC plane fit on the cloud anchors a gravity-aligned crop frame
per camera pose, and consecutive crop frames induce the rigid displacement
field used for temporal feature warping.

World convention: +z is up. Camera poses are camera-to-world with pinhole
axes (x right, y down, z forward), so a level camera has its y column at
(0, 0, -1).
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .grid import BACKGROUND_CLASSES, GridSpec, TopViewMap, VOID_LABEL

WORLD_UP = np.array([0.0, 0.0, 1.0])
PLANE_BAND_M = 0.5


@dataclass(frozen=True)
class Plane:
    """Plane as unit normal n and offset d with n.x + d = 0."""

    normal: np.ndarray
    offset: float

    def __post_init__(self):
        n = np.asarray(self.normal, dtype=np.float64)
        norm = np.linalg.norm(n)
        if not np.isfinite(norm) or norm < 1e-12:
            raise ValueError("degenerate plane normal")
        object.__setattr__(self, "normal", n / norm)
        object.__setattr__(self, "offset", float(self.offset) / norm)

    def signed_distance(self, points: np.ndarray) -> np.ndarray:
        return np.asarray(points, dtype=np.float64) @ self.normal + self.offset

    def project(self, points: np.ndarray) -> np.ndarray:
        points = np.asarray(points, dtype=np.float64)
        return points - np.outer(self.signed_distance(points), self.normal)


def _orient_up(n: np.ndarray) -> np.ndarray:
    """Flip the normal to positive world-up; falls back to first nonzero > 0."""
    dot = float(n @ WORLD_UP)
    if abs(dot) > 1e-12:
        return n if dot > 0 else -n
    for v in n:
        if abs(v) > 1e-12:
            return n if v > 0 else -n
    return n


def plane_from_points_lsq(points: np.ndarray) -> Plane:
    """Least-squares plane: smallest eigenvector of the centered covariance."""
    points = np.asarray(points, dtype=np.float64)
    if len(points) < 3:
        raise ValueError("plane fit needs at least 3 points")
    centroid = points.mean(axis=0)
    centered = points - centroid
    cov = centered.T @ centered
    _, vecs = np.linalg.eigh(cov)
    n = _orient_up(vecs[:, 0])
    return Plane(n, -float(n @ centroid))


@dataclass
class CameraPose:
    """Camera-to-world rigid transform."""

    rotation: np.ndarray
    translation: np.ndarray
    frame_id: int = 0

    def __post_init__(self):
        self.rotation = np.asarray(self.rotation, dtype=np.float64)
        self.translation = np.asarray(self.translation, dtype=np.float64)
        if self.rotation.shape != (3, 3) or self.translation.shape != (3,):
            raise ValueError("pose needs a 3x3 rotation and 3-vector translation")
        err = np.abs(self.rotation @ self.rotation.T - np.eye(3)).max()
        if err > 1e-6 or np.linalg.det(self.rotation) < 0:
            raise ValueError("pose rotation is not a proper rotation (err %.3g)" % err)

    @property
    def center(self) -> np.ndarray:
        return self.translation

    @property
    def forward(self) -> np.ndarray:
        return self.rotation[:, 2]

    def world_to_camera(self, points: np.ndarray) -> np.ndarray:
        return (np.asarray(points, dtype=np.float64) - self.translation) @ self.rotation

    def camera_to_world(self, points: np.ndarray) -> np.ndarray:
        return np.asarray(points, dtype=np.float64) @ self.rotation.T + self.translation


@dataclass
class ReconPointCloud:
    """Reconstructed points with per-point pixel visibility.

    visibility[i] lists (frame_id, u, v) pixel observations of point i.
    """

    points: np.ndarray
    visibility: list = field(repr=False)

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64)
        if self.points.ndim != 2 or self.points.shape[1] != 3:
            raise ValueError("points must be (N, 3)")
        if len(self.visibility) != len(self.points):
            raise ValueError("visibility list length differs from point count")


def label_points_wta(cloud: ReconPointCloud, sems: dict) -> np.ndarray:
    """Winner-take-all point labels from per-frame class distributions.

    sems maps frame_id -> (h, w, C) array. Each visible pixel casts one vote,
    the argmax of its distribution; all-zero pixels are void and abstain.
    Points without votes get VOID_LABEL. Ties resolve to the lowest class.
    """
    n_classes = None
    for sem in sems.values():
        n_classes = sem.shape[2]
        break
    if n_classes is None:
        raise ValueError("no semantic frames supplied")

    votes = np.zeros((len(cloud.points), n_classes), dtype=np.int64)
    for i, vis in enumerate(cloud.visibility):
        for frame_id, u, v in vis:
            if frame_id not in sems:
                raise KeyError("visibility references unknown frame %r" % (frame_id,))
            dist = sems[frame_id][v, u]
            if dist.max() <= 0.0:
                continue
            votes[i, int(np.argmax(dist))] += 1
    labels = np.argmax(votes, axis=1)  # argmax takes the lowest index on ties
    labels[votes.sum(axis=1) == 0] = VOID_LABEL
    return labels


def fit_road_plane_ransac(
    points: np.ndarray,
    iters: int = 500,
    inlier_thresh_m: float = 0.05,
    rng_seed=0,
):
    """3-point-hypothesis RANSAC plane; returns (plane, best inlier indices).

    The winning hypothesis is re-fit by least squares on its inlier set and
    the normal is oriented toward positive world-up.
    """
    points = np.asarray(points, dtype=np.float64)
    if len(points) < 3:
        raise ValueError("RANSAC needs at least 3 points")
    rng = rng_seed if isinstance(rng_seed, np.random.Generator) else np.random.default_rng(rng_seed)

    idx = rng.integers(0, len(points), size=(iters, 3))
    p0, p1, p2 = points[idx[:, 0]], points[idx[:, 1]], points[idx[:, 2]]
    normals = np.cross(p1 - p0, p2 - p0)
    norms = np.linalg.norm(normals, axis=1)
    valid = norms > 1e-12
    if not valid.any():
        raise ValueError("all RANSAC hypotheses were degenerate")
    normals[valid] /= norms[valid, None]
    offsets = -np.einsum("ij,ij->i", normals, p0)

    # (iters, N) absolute distances; grids here are small enough to hold flat.
    dist = np.abs(points @ normals.T + offsets[None, :]).T
    counts = np.where(valid, (dist <= inlier_thresh_m).sum(axis=1), -1)
    best = int(np.argmax(counts))
    inliers = np.nonzero(dist[best] <= inlier_thresh_m)[0]
    plane = plane_from_points_lsq(points[inliers])
    return plane, inliers


@dataclass(frozen=True)
class CropFrame:
    """Gravity-aligned 2D frame on the road plane for one camera pose."""

    origin: np.ndarray
    right: np.ndarray
    forward: np.ndarray
    normal: np.ndarray


def crop_frame(pose: CameraPose, plane: Plane) -> CropFrame:
    """Project the camera onto the plane and align forward with its heading."""
    origin = plane.project(pose.center[None, :])[0]
    fwd = pose.forward - (pose.forward @ plane.normal) * plane.normal
    norm = np.linalg.norm(fwd)
    if norm < 1e-9:
        raise ValueError("camera forward is parallel to the plane normal")
    fwd = fwd / norm
    right = np.cross(fwd, plane.normal)
    return CropFrame(origin, right, fwd, plane.normal)


def crop_bev_col(
    points: np.ndarray,
    labels: np.ndarray,
    plane: Plane,
    pose: CameraPose,
    grid: GridSpec = None,
    n_classes: int = BACKGROUND_CLASSES,
    band_m: float = PLANE_BAND_M,
) -> TopViewMap:
    """Ego-anchored crop of the labeled cloud; one-hot mean per cell."""
    if grid is None:
        grid = GridSpec()
    points = np.asarray(points, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    frame = crop_frame(pose, plane)

    near = np.abs(plane.signed_distance(points)) <= band_m
    near &= labels >= 0
    out = TopViewMap.zeros(grid, n_classes)
    if not near.any():
        return out
    rel = points[near] - frame.origin
    x = rel @ frame.right
    z = rel @ frame.forward
    row, col = grid.xz_to_rowcol(x, z)
    ok = grid.in_bounds(row, col)
    if not ok.any():
        return out
    flat = row[ok] * grid.width_px + col[ok]
    lab = labels[near][ok]
    counts = np.zeros((grid.height_px * grid.width_px, n_classes))
    np.add.at(counts, (flat, lab), 1.0)
    totals = counts.sum(axis=1)
    filled = totals > 0
    counts[filled] /= totals[filled, None]
    out.data[:] = counts.reshape(grid.height_px, grid.width_px, n_classes)
    return out


@dataclass(frozen=True)
class PlanarMotion:
    """Rigid 2D map from one crop frame's plane coords into another's."""

    rot: np.ndarray  # (2, 2)
    shift: np.ndarray  # (2,)

    def apply(self, xz: np.ndarray) -> np.ndarray:
        return np.asarray(xz, dtype=np.float64) @ self.rot.T + self.shift


def planar_motion(src: CropFrame, dst: CropFrame) -> PlanarMotion:
    """Plane coordinates in src expressed in dst; exact for shared planes."""
    rot = np.array(
        [
            [src.right @ dst.right, src.forward @ dst.right],
            [src.right @ dst.forward, src.forward @ dst.forward],
        ]
    )
    delta = src.origin - dst.origin
    shift = np.array([delta @ dst.right, delta @ dst.forward])
    return PlanarMotion(rot, shift)


def _feature_cell_centers(grid: GridSpec, h_f: int, w_f: int):
    """Plane (x, z) coordinates of feature-cell centers."""
    cw = grid.extent_width_m / w_f
    ch = grid.extent_length_m / h_f
    xs = (np.arange(w_f) + 0.5) * cw - grid.extent_width_m / 2.0
    zs = grid.extent_length_m - (np.arange(h_f) + 0.5) * ch
    return xs, zs, cw, ch


def displacement_from_motion(motion: PlanarMotion, grid: GridSpec, feature_dims) -> np.ndarray:
    """(h_f, w_f, 2) row/col offsets mapping frame-t cells into frame t-1."""
    h_f, w_f = feature_dims
    xs, zs, cw, ch = _feature_cell_centers(grid, h_f, w_f)
    x = np.broadcast_to(xs[None, :], (h_f, w_f))
    z = np.broadcast_to(zs[:, None], (h_f, w_f))
    pts = np.stack([x.ravel(), z.ravel()], axis=1)
    prev = motion.apply(pts)
    col_prev = (prev[:, 0] + grid.extent_width_m / 2.0) / cw - 0.5
    row_prev = (grid.extent_length_m - prev[:, 1]) / ch - 0.5
    rows = np.repeat(np.arange(h_f), w_f)
    cols = np.tile(np.arange(w_f), h_f)
    field_ = np.stack([row_prev - rows, col_prev - cols], axis=1)
    return field_.reshape(h_f, w_f, 2)


def plane_displacement_field(
    pose_t: CameraPose,
    pose_prev: CameraPose,
    plane: Plane,
    grid: GridSpec = None,
    feature_dims=None,
) -> np.ndarray:
    """Displacement field for warping frame t-1 features into frame t.

    Entry (i, j) holds (row offset, col offset) in feature-cell units such
    that cell (i, j) of frame t samples (i, j) + offset in frame t-1.
    """
    if grid is None:
        grid = GridSpec()
    if feature_dims is None:
        feature_dims = (grid.height_px, grid.width_px)
    motion = planar_motion(crop_frame(pose_t, plane), crop_frame(pose_prev, plane))
    return displacement_from_motion(motion, grid, feature_dims)


def level_pose(x: float, y: float, heading: float, height: float = 1.5, frame_id: int = 0) -> CameraPose:
    """Pose on the z=0 ground plane, heading measured from +y toward +x."""
    fwd = np.array([math.sin(heading), math.cos(heading), 0.0])
    right = np.cross(fwd, WORLD_UP)
    rot = np.stack([right, -WORLD_UP, fwd], axis=1)
    return CameraPose(rot, np.array([x, y, height]), frame_id)
