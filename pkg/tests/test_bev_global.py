import math

import numpy as np
import pytest

from roadlayout.bev_global import (
    CameraPose,
    Plane,
    ReconPointCloud,
    crop_bev_col,
    crop_frame,
    fit_road_plane_ransac,
    label_points_wta,
    level_pose,
    plane_displacement_field,
    plane_from_points_lsq,
    planar_motion,
)
from roadlayout.grid import GridSpec, VOID_LABEL


def test_plane_normalizes_and_measures_distance():
    p = Plane(np.array([0.0, 0.0, 2.0]), -4.0)
    assert np.allclose(p.normal, [0, 0, 1])
    assert abs(p.offset + 2.0) < 1e-12
    d = p.signed_distance(np.array([[0.0, 0.0, 5.0], [1.0, 2.0, 2.0]]))
    assert np.allclose(d, [3.0, 0.0])
    proj = p.project(np.array([[7.0, -1.0, 9.0]]))
    assert np.allclose(proj, [[7.0, -1.0, 2.0]])


def test_lsq_plane_exact_on_noise_free_points():
    rng = np.random.default_rng(0)
    pts = np.zeros((40, 3))
    pts[:, 0] = rng.uniform(-5, 5, 40)
    pts[:, 1] = rng.uniform(-5, 5, 40)
    pts[:, 2] = 1.5
    plane = plane_from_points_lsq(pts)
    assert np.allclose(plane.normal, [0, 0, 1], atol=1e-12)
    assert abs(plane.offset + 1.5) < 1e-12


def test_pose_validates_rotation():
    with pytest.raises(ValueError):
        CameraPose(np.eye(3) * 2.0, np.zeros(3))


def test_ransac_zero_noise_exact():
    rng = np.random.default_rng(1)
    pts = np.zeros((500, 3))
    pts[:, 0] = rng.uniform(-10, 10, 500)
    pts[:, 1] = rng.uniform(0, 30, 500)
    plane, inliers = fit_road_plane_ransac(pts, iters=100, rng_seed=2)
    assert len(inliers) == 500
    assert np.abs(plane.normal - np.array([0, 0, 1.0])).max() < 1e-9
    assert abs(plane.offset) < 1e-9


def test_ransac_with_noise_and_outliers():
    rng = np.random.default_rng(3)
    n = 1000
    pts = np.zeros((n, 3))
    pts[:, 0] = rng.uniform(-10, 10, n)
    pts[:, 1] = rng.uniform(0, 40, n)
    pts[:, 2] = rng.normal(0.0, 0.01, n)
    n_out = 300
    pts[:n_out] = rng.uniform([-10, 0, 0.3], [10, 40, 4.0], (n_out, 3))
    plane, inliers = fit_road_plane_ransac(pts, iters=500, inlier_thresh_m=0.05, rng_seed=4)
    angle = math.degrees(math.acos(min(1.0, abs(plane.normal @ np.array([0, 0, 1.0])))))
    assert angle < 1.0
    assert abs(plane.offset) < 0.02
    assert len(inliers) > 0.9 * (n - n_out)


def test_wta_matches_brute_force_majority():
    rng = np.random.default_rng(5)
    n_classes = 4
    for _ in range(200):
        n_pts = int(rng.integers(1, 8))
        n_frames = int(rng.integers(1, 5))
        sems = {f: rng.random((4, 4, n_classes)) for f in range(n_frames)}
        # some pixels are void (all zero)
        for f in range(n_frames):
            mask = rng.random((4, 4)) < 0.2
            sems[f][mask] = 0.0
        vis = []
        for _ in range(n_pts):
            n_obs = int(rng.integers(0, 11))
            vis.append(
                [
                    (int(rng.integers(0, n_frames)), int(rng.integers(0, 4)), int(rng.integers(0, 4)))
                    for _ in range(n_obs)
                ]
            )
        cloud = ReconPointCloud(rng.normal(size=(n_pts, 3)), vis)
        labels = label_points_wta(cloud, sems)
        for i, obs in enumerate(vis):
            votes = [0] * n_classes
            for f, u, v in obs:
                dist = sems[f][v, u]
                if dist.max() > 0.0:
                    votes[int(np.argmax(dist))] += 1
            if sum(votes) == 0:
                assert labels[i] == VOID_LABEL
            else:
                best = max(votes)
                assert labels[i] == votes.index(best)  # ties to lowest class


def _field_oracle(pose_t, pose_prev, grid, h_f, w_f):
    """Closed-form SE(2) displacement for level poses on the z=0 plane."""
    cw = grid.extent_width_m / w_f
    ch = grid.extent_length_m / h_f
    xs = (np.arange(w_f) + 0.5) * cw - grid.extent_width_m / 2.0
    zs = grid.extent_length_m - (np.arange(h_f) + 0.5) * ch
    out = np.zeros((h_f, w_f, 2))
    ox_t, oy_t = pose_t.translation[0], pose_t.translation[1]
    ox_p, oy_p = pose_prev.translation[0], pose_prev.translation[1]
    ht = math.atan2(pose_t.forward[0], pose_t.forward[1])
    hp = math.atan2(pose_prev.forward[0], pose_prev.forward[1])
    for i, z in enumerate(zs):
        for j, x in enumerate(xs):
            wx = ox_t + x * math.cos(ht) + z * math.sin(ht)
            wy = oy_t - x * math.sin(ht) + z * math.cos(ht)
            xp = (wx - ox_p) * math.cos(hp) - (wy - oy_p) * math.sin(hp)
            zp = (wx - ox_p) * math.sin(hp) + (wy - oy_p) * math.cos(hp)
            col_p = (xp + grid.extent_width_m / 2.0) / cw - 0.5
            row_p = (grid.extent_length_m - zp) / ch - 0.5
            out[i, j, 0] = row_p - i
            out[i, j, 1] = col_p - j
    return out


def test_displacement_field_matches_se2_oracle():
    grid = GridSpec(32, 16)
    plane = Plane(np.array([0.0, 0.0, 1.0]), 0.0)
    rng = np.random.default_rng(6)
    for _ in range(10):
        x0, y0, h0 = rng.uniform(-3, 3), rng.uniform(-3, 3), rng.uniform(-0.5, 0.5)
        dx, dy, dh = rng.uniform(-1, 1), rng.uniform(0.2, 1.5), rng.uniform(-0.15, 0.15)
        pa = level_pose(x0, y0, h0)
        pb = level_pose(x0 + dx, y0 + dy, h0 + dh)
        for dims in ((32, 16), (8, 4)):
            field = plane_displacement_field(pb, pa, plane, grid, dims)
            oracle = _field_oracle(pb, pa, grid, *dims)
            assert np.abs(field - oracle).max() < 1e-9


def _interp_field(field, rows, cols):
    """Bilinear read of a (h, w, 2) field at fractional cell coordinates."""
    h, w = field.shape[:2]
    r0 = np.clip(np.floor(rows).astype(int), 0, h - 2)
    c0 = np.clip(np.floor(cols).astype(int), 0, w - 2)
    fr = rows - r0
    fc = cols - c0
    out = (
        field[r0, c0] * ((1 - fr) * (1 - fc))[..., None]
        + field[r0 + 1, c0] * (fr * (1 - fc))[..., None]
        + field[r0, c0 + 1] * ((1 - fr) * fc)[..., None]
        + field[r0 + 1, c0 + 1] * (fr * fc)[..., None]
    )
    return out


def test_displacement_fields_compose():
    grid = GridSpec(32, 16)
    plane = Plane(np.array([0.0, 0.0, 1.0]), 0.0)
    p0 = level_pose(0.0, 0.0, 0.0)
    p1 = level_pose(0.3, 0.8, 0.06)
    p2 = level_pose(0.5, 1.7, 0.11)
    f21 = plane_displacement_field(p2, p1, plane, grid)
    f10 = plane_displacement_field(p1, p0, plane, grid)
    f20 = plane_displacement_field(p2, p0, plane, grid)
    h, w = 32, 16
    rows = np.repeat(np.arange(h), w).astype(float).reshape(h, w)
    cols = np.tile(np.arange(w), h).astype(float).reshape(h, w)
    mid_r = rows + f21[:, :, 0]
    mid_c = cols + f21[:, :, 1]
    hop = _interp_field(f10, mid_r, mid_c)
    composed = np.stack([f21[:, :, 0] + hop[:, :, 0], f21[:, :, 1] + hop[:, :, 1]], axis=2)
    assert np.abs(composed - f20).max() < 1e-6


def test_zero_motion_field_is_zero():
    grid = GridSpec(16, 8)
    plane = Plane(np.array([0.0, 0.0, 1.0]), 0.0)
    p = level_pose(1.0, 2.0, 0.3)
    field = plane_displacement_field(p, p, plane, grid)
    assert np.abs(field).max() < 1e-12


def test_crop_bev_col_places_points():
    grid = GridSpec(32, 16)
    plane = Plane(np.array([0.0, 0.0, 1.0]), 0.0)
    pose = level_pose(0.0, 0.0, 0.0)
    # one road point 10 m ahead, one sidewalk point 5 m ahead and 3 m right,
    # one point above the plane band that must be ignored
    pts = np.array([[0.0, 10.0, 0.0], [3.0, 5.0, 0.1], [0.0, 20.0, 2.0]])
    labels = np.array([0, 1, 0])
    out = crop_bev_col(pts, labels, plane, pose, grid)
    row, col = grid.xz_to_rowcol(0.0, 10.0)
    assert out.data[row, col, 0] == 1.0
    row, col = grid.xz_to_rowcol(3.0, 5.0)
    assert out.data[row, col, 1] == 1.0
    assert out.data.sum() == 2.0


def test_crop_bev_col_mixes_cell_votes():
    grid = GridSpec(4, 4, 4.0, 4.0)
    plane = Plane(np.array([0.0, 0.0, 1.0]), 0.0)
    pose = level_pose(0.0, 0.0, 0.0)
    pts = np.array([[0.1, 0.6, 0.0], [0.2, 0.7, 0.0], [0.3, 0.8, 0.0], [0.1, 0.9, 0.0]])
    labels = np.array([0, 0, 0, 1])
    out = crop_bev_col(pts, labels, plane, pose, grid)
    row, col = grid.xz_to_rowcol(0.2, 0.75)
    assert abs(out.data[row, col, 0] - 0.75) < 1e-12
    assert abs(out.data[row, col, 1] - 0.25) < 1e-12


def test_planar_motion_between_identical_frames_is_identity():
    plane = Plane(np.array([0.0, 0.0, 1.0]), 0.0)
    f = crop_frame(level_pose(2.0, 1.0, 0.7), plane)
    m = planar_motion(f, f)
    assert np.allclose(m.rot, np.eye(2), atol=1e-12)
    assert np.allclose(m.shift, 0.0, atol=1e-12)
