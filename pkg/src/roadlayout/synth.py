"""Synthetic sequence generator standing in for real drives.

A sampled scene evolves kinematically: the ego advances along the road
centerline with a small heading wobble, along-road distances shrink by the
per-frame displacement, and poses stay consistent with the rendered layouts.
Single-frame inputs degrade with a field-of-view wedge, range-dependent
dropout and label noise, and occlusion shadows; sequence-level inputs degrade
by spatially even thinning plus contiguous holes. A separate path lifts the
scene into a labeled point cloud with per-frame pixel visibility to exercise
the sequence-level reconstruction pipeline end to end.

Determinism: every sequence draws from numpy SeedSequence((seed, index)), so
datasets re-emit byte-identically for a given config and seed.
"""

import hashlib
import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import attributes as A
from .bev_global import CameraPose, Plane, ReconPointCloud, level_pose, plane_displacement_field
from .formats import (
    read_fields,
    read_tvmp,
    write_fields,
    write_poses,
    write_tvmp,
)
from .fusion import TopViewBox, boxes_from_json, boxes_to_json, build_final_input
from .grid import BACKGROUND_CLASSES, GridSpec, TopViewMap
from .render import render
from .train import TrainData

GROUND_PLANE = Plane(np.array([0.0, 0.0, 1.0]), 0.0)


@dataclass(frozen=True)
class DifficultyConfig:
    """Degradation strengths; zeros give clean pass-through inputs."""

    fov_deg: float = 120.0
    dropout_near: float = 0.05
    dropout_far: float = 0.45
    noise_far: float = 0.20
    flip_far: float = 0.10
    occlusion: bool = True
    density: float = 0.55
    hole_count: int = 2
    hole_radius_cells: float = 2.5
    vote_corruption: float = 0.0


CLEAN = DifficultyConfig(
    fov_deg=360.0,
    dropout_near=0.0,
    dropout_far=0.0,
    noise_far=0.0,
    flip_far=0.0,
    occlusion=False,
    density=1.0,
    hole_count=0,
)


@dataclass(frozen=True)
class SynthConfig:
    seed: int = 0
    n_train: int = 200
    n_test: int = 50
    frames: int = 8
    grid_h: int = 32
    grid_w: int = 16
    boxes_max: int = 3
    step_min: float = 0.28
    step_max: float = 0.5
    wobble_sigma: float = 0.004
    aligned_motion: bool = False  # grid-locked straight steps, no wobble
    difficulty: DifficultyConfig = field(default_factory=DifficultyConfig)

    def grid(self) -> GridSpec:
        return GridSpec(self.grid_h, self.grid_w)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, obj: dict) -> "SynthConfig":
        obj = dict(obj)
        if "difficulty" in obj and isinstance(obj["difficulty"], dict):
            obj["difficulty"] = DifficultyConfig(**obj["difficulty"])
        return cls(**obj)


def config_hash(cfg: SynthConfig) -> str:
    blob = json.dumps(cfg.to_dict(), sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()


# Scene sampling --------------------------------------------------------------

_LANE_COUNT_P = (0.30, 0.35, 0.25, 0.10)


def _lane_count(rng) -> int:
    return int(rng.choice(len(_LANE_COUNT_P), p=_LANE_COUNT_P))


def sample_attributes(rng: np.random.Generator, curved_ok: bool = True) -> A.SceneAttributes:
    """Draw one conflict-free scene; rejection-checked against validate()."""
    for _ in range(64):
        attrs = _draw_attributes(rng, curved_ok)
        if not A.validate(attrs):
            return attrs
    raise RuntimeError("attribute sampler failed to produce a conflict-free scene")


def _draw_attributes(rng, curved_ok) -> A.SceneAttributes:
    b = [False] * A.N_BINARY
    c = [0.0] * A.N_CONTINUOUS

    # Gentle bends: tight radii push far-field features out of the grid,
    # leaving flags with no visual evidence, while the radius cap must stay
    # below the attribute range ceiling so values survive discretization.
    b[A.B_CURVED] = curved_ok and rng.random() < 0.25
    if b[A.B_CURVED]:
        c[A.C_CURVE_RADIUS] = rng.uniform(40.0, 58.0)
    c[A.C_ROTATION] = float(np.clip(rng.normal(0.0, 0.10), -0.35, 0.35))

    # One-way roads carry no opposing lanes, and two-way roads always have at
    # least one; the flag stays inferable from the rendered lane structure.
    b[A.B_ONE_WAY] = rng.random() < 0.25
    m1 = 0 if b[A.B_ONE_WAY] else 1 + int(rng.choice(3, p=(0.50, 0.36, 0.14)))
    m2 = _lane_count(rng)
    c[A.C_LANE_EGO] = rng.uniform(2.7, 3.8)
    for k in range(m1):
        c[A.C_LANE_LEFT0 + k] = rng.uniform(2.7, 3.8)
    for k in range(m2):
        c[A.C_LANE_RIGHT0 + k] = rng.uniform(2.7, 3.8)

    # Widths below roughly one grid cell would leave no visible trace at the
    # training resolution, so the draws start near the cell size.
    if not b[A.B_ONE_WAY] and rng.random() < 0.35:
        b[A.B_MEDIAN] = True
        c[A.C_MEDIAN_WIDTH] = rng.uniform(1.8, 3.5)

    b[A.B_SIDEWALK_LEFT] = rng.random() < 0.65
    b[A.B_SIDEWALK_RIGHT] = rng.random() < 0.65
    if (b[A.B_SIDEWALK_LEFT] or b[A.B_SIDEWALK_RIGHT]) and rng.random() < 0.5:
        b[A.B_SIDEWALK_GAP] = True
        c[A.C_SIDEWALK_GAP_WIDTH] = rng.uniform(1.8, 3.8)

    # On curved roads, distant features drift toward the grid edge with the
    # bend, so their draw range tightens to keep them observable.
    far_cap = 22.0 if b[A.B_CURVED] else 32.0
    b[A.B_SIDE_ROAD_LEFT] = rng.random() < 0.45
    if b[A.B_SIDE_ROAD_LEFT]:
        c[A.C_LEFT_ROAD_WIDTH] = rng.uniform(5.0, 9.0)
        c[A.C_DIST_LEFT_ROAD] = rng.uniform(8.0, far_cap)
        b[A.B_XWALK_LEFT_ROAD] = rng.random() < 0.45
    b[A.B_SIDE_ROAD_RIGHT] = rng.random() < 0.45
    if b[A.B_SIDE_ROAD_RIGHT]:
        c[A.C_RIGHT_ROAD_WIDTH] = rng.uniform(5.0, 9.0)
        c[A.C_DIST_RIGHT_ROAD] = rng.uniform(8.0, far_cap)
        b[A.B_XWALK_RIGHT_ROAD] = rng.random() < 0.45

    any_side = b[A.B_SIDE_ROAD_LEFT] or b[A.B_SIDE_ROAD_RIGHT]
    if any_side:
        b[A.B_ROAD_ENDS] = rng.random() < 0.30
        b[A.B_XWALK_BEFORE] = rng.random() < 0.45
        if not b[A.B_ROAD_ENDS]:
            b[A.B_XWALK_AFTER] = rng.random() < 0.40
        starts = [c[A.C_DIST_LEFT_ROAD]] if b[A.B_SIDE_ROAD_LEFT] else []
        starts += [c[A.C_DIST_RIGHT_ROAD]] if b[A.B_SIDE_ROAD_RIGHT] else []
        ends = [c[A.C_DIST_LEFT_ROAD] + c[A.C_LEFT_ROAD_WIDTH]] if b[A.B_SIDE_ROAD_LEFT] else []
        ends += [c[A.C_DIST_RIGHT_ROAD] + c[A.C_RIGHT_ROAD_WIDTH]] if b[A.B_SIDE_ROAD_RIGHT] else []
        int_lo, int_hi = min(starts), max(ends)
    if rng.random() < 0.30:
        for _ in range(20):
            cand = rng.uniform(5.0, 20.0 if b[A.B_CURVED] else 28.0)
            if not any_side or cand + 3.0 < int_lo - 3.5 or cand > int_hi + 3.5:
                b[A.B_XWALK_MAIN] = True
                c[A.C_DIST_XWALK] = cand
                break

    return A.SceneAttributes(tuple(b), (m1, m2), tuple(c))


# Kinematic evolution ---------------------------------------------------------


def _advance(attrs: A.SceneAttributes, step: float, wobble: float) -> A.SceneAttributes:
    """One frame of ego motion: shrink along-road distances, wobble heading."""
    b = list(attrs.binary)
    c = list(attrs.continuous)
    c[A.C_ROTATION] = float(
        np.clip(c[A.C_ROTATION] + wobble, -math.pi / 2.0, math.pi / 2.0)
    )

    def shrink(flag, dist_idx, width_idx=None, *dependents):
        if not b[flag]:
            return
        if c[dist_idx] - step <= 0.0:
            b[flag] = False
            c[dist_idx] = 0.0
            if width_idx is not None:
                c[width_idx] = 0.0
            for dep in dependents:
                b[dep] = False
        else:
            c[dist_idx] -= step

    shrink(A.B_SIDE_ROAD_LEFT, A.C_DIST_LEFT_ROAD, A.C_LEFT_ROAD_WIDTH, A.B_XWALK_LEFT_ROAD)
    shrink(A.B_SIDE_ROAD_RIGHT, A.C_DIST_RIGHT_ROAD, A.C_RIGHT_ROAD_WIDTH, A.B_XWALK_RIGHT_ROAD)
    if not (b[A.B_SIDE_ROAD_LEFT] or b[A.B_SIDE_ROAD_RIGHT]):
        b[A.B_XWALK_BEFORE] = False
        b[A.B_XWALK_AFTER] = False
        b[A.B_ROAD_ENDS] = False
    shrink(A.B_XWALK_MAIN, A.C_DIST_XWALK)
    return A.SceneAttributes(tuple(b), attrs.multiclass, tuple(c))


def _arc_to_plane(attrs: A.SceneAttributes, d, s):
    """Road-centerline coordinates to the frame-0 road frame."""
    if attrs.binary[A.B_CURVED] and attrs.continuous[A.C_CURVE_RADIUS] > 0.0:
        radius = attrs.continuous[A.C_CURVE_RADIUS]
        phi = s / radius
        x = radius - (radius - d) * math.cos(phi)
        y = (radius - d) * math.sin(phi)
        return x, y, phi
    return d, s, 0.0


def evolve_sequence(attrs0: A.SceneAttributes, frames: int, cfg: SynthConfig, rng):
    """Per-frame attributes and world poses along the road centerline.

    World frame = frame-0 ego ground frame (x right, y forward, z up).
    """
    grid = cfg.grid()
    attrs = [attrs0]
    if cfg.aligned_motion:
        steps = [grid.cell_h] * (frames - 1)
        wobbles = [0.0] * (frames - 1)
    else:
        steps = [float(rng.uniform(cfg.step_min, cfg.step_max)) for _ in range(frames - 1)]
        wobbles = [float(rng.normal(0.0, cfg.wobble_sigma)) for _ in range(frames - 1)]
    for step, wob in zip(steps, wobbles):
        attrs.append(_advance(attrs[-1], step, wob))

    rot0 = attrs0.continuous[A.C_ROTATION]
    road_heading = -rot0
    poses = []
    s_accum = 0.0
    for t in range(frames):
        rot_t = attrs[t].continuous[A.C_ROTATION]
        px, py, phi = _arc_to_plane(attrs0, 0.0, s_accum)
        # Rotate the road-frame point into the world (frame-0 ego) frame.
        wx = math.cos(rot0) * px - math.sin(rot0) * py
        wy = math.sin(rot0) * px + math.cos(rot0) * py
        heading = road_heading + phi + rot_t
        poses.append(level_pose(wx, wy, heading, frame_id=t))
        if t < frames - 1:
            s_accum += steps[t]
    return attrs, poses


def displacement_fields(poses, grid: GridSpec, feature_dims=None) -> np.ndarray:
    """(T-1, h, w, 2) fields mapping each frame's cells into its predecessor."""
    if feature_dims is None:
        feature_dims = (grid.height_px, grid.width_px)
    out = np.zeros((len(poses) - 1,) + tuple(feature_dims) + (2,))
    for t in range(1, len(poses)):
        out[t - 1] = plane_displacement_field(
            poses[t], poses[t - 1], GROUND_PLANE, grid, feature_dims
        )
    return out


# Object boxes ----------------------------------------------------------------


def _sample_world_boxes(attrs0: A.SceneAttributes, cfg: SynthConfig, rng):
    """Static boxes in the world frame as (x, y, length, width, heading)."""
    c = attrs0.continuous
    m1, m2 = attrs0.multiclass
    ego_w = c[A.C_LANE_EGO]
    left_sum = sum(c[A.C_LANE_LEFT0 + k] for k in range(m1))
    right_sum = sum(c[A.C_LANE_RIGHT0 + k] for k in range(m2))
    median = c[A.C_MEDIAN_WIDTH] if attrs0.binary[A.B_MEDIAN] else 0.0
    d_min = -ego_w / 2.0 - median - left_sum
    d_max = ego_w / 2.0 + right_sum
    rot0 = c[A.C_ROTATION]

    boxes = []
    n = int(rng.integers(0, cfg.boxes_max + 1))
    for _ in range(n):
        side_ok = attrs0.binary[A.B_SIDE_ROAD_LEFT] or attrs0.binary[A.B_SIDE_ROAD_RIGHT]
        on_side = side_ok and rng.random() < 0.5
        if on_side:
            left = attrs0.binary[A.B_SIDE_ROAD_LEFT] and (
                not attrs0.binary[A.B_SIDE_ROAD_RIGHT] or rng.random() < 0.5
            )
            if left:
                dist, width = c[A.C_DIST_LEFT_ROAD], c[A.C_LEFT_ROAD_WIDTH]
                d = d_min - rng.uniform(2.5, 7.0)
                yaw_road = -math.pi / 2.0 + rng.normal(0.0, 0.08)
            else:
                dist, width = c[A.C_DIST_RIGHT_ROAD], c[A.C_RIGHT_ROAD_WIDTH]
                d = d_max + rng.uniform(2.5, 7.0)
                yaw_road = math.pi / 2.0 + rng.normal(0.0, 0.08)
            s = rng.uniform(dist + 1.0, dist + max(width - 1.0, 1.5))
        else:
            d = rng.uniform(d_min + 1.0, d_max - 1.0) if d_max - d_min > 2.5 else 0.0
            s = rng.uniform(5.0, 45.0)
            yaw_road = (0.0 if rng.random() < 0.7 else math.pi) + rng.normal(0.0, 0.08)
        px, py, phi = _arc_to_plane(attrs0, d, s)
        wx = math.cos(rot0) * px - math.sin(rot0) * py
        wy = math.sin(rot0) * px + math.cos(rot0) * py
        heading = -rot0 + phi + yaw_road  # road tangent heading + local yaw
        boxes.append((wx, wy, rng.uniform(4.0, 5.0), rng.uniform(1.7, 2.0), heading))
    return boxes


def _boxes_in_frame(world_boxes, pose: CameraPose):
    """World boxes into one frame's ego ground coordinates."""
    fwd = pose.forward
    heading_t = math.atan2(fwd[0], fwd[1])
    cx, cy = pose.center[0], pose.center[1]
    ch, sh = math.cos(heading_t), math.sin(heading_t)
    out = []
    for wx, wy, length, width, heading in world_boxes:
        dx, dy = wx - cx, wy - cy
        ex = ch * dx - sh * dy
        ez = sh * dx + ch * dy
        out.append(TopViewBox(ex, ez, length, width, heading - heading_t))
    return out


# Degradations ----------------------------------------------------------------


def visibility_mask(grid: GridSpec, diff: DifficultyConfig, boxes=None) -> np.ndarray:
    """Structural single-view visibility: FOV wedge minus box shadows.

    Purely geometric, so it is fixed per frame and reusable across fresh
    degradation draws.
    """
    x, z = grid.cell_centers()
    r = np.hypot(x, z)
    keep = np.ones(x.shape, dtype=bool)

    if diff.fov_deg < 360.0:
        half = math.radians(diff.fov_deg) / 2.0
        keep &= np.abs(x) <= math.tan(min(half, math.pi / 2.0 - 1e-9)) * np.maximum(z, 0.0)

    if diff.occlusion and boxes:
        for box in boxes:
            ch, sh = math.cos(box.yaw), math.sin(box.yaw)
            hl, hw = box.length / 2.0, box.width / 2.0
            cx = np.array([box.cx + sh * dl * hl + ch * dw * hw for dl, dw in
                           ((1, 1), (1, -1), (-1, 1), (-1, -1))])
            cz = np.array([box.cz + ch * dl * hl - sh * dw * hw for dl, dw in
                           ((1, 1), (1, -1), (-1, 1), (-1, -1))])
            if np.any(cz <= 0.5):
                continue
            ang = np.arctan2(cx, cz)
            r0 = float(np.min(np.hypot(cx, cz)))
            cell_ang = np.arctan2(x, np.maximum(z, 1e-9))
            shadow = (cell_ang >= ang.min()) & (cell_ang <= ang.max()) & (r > r0) & (z > 0)
            keep &= ~shadow
    return keep


def degrade_local(gt: TopViewMap, diff: DifficultyConfig, rng, boxes=None) -> TopViewMap:
    """Frame-level corruption of a rendered map into a plausible single-view input."""
    grid = gt.grid
    data = gt.data.copy()
    x, z = grid.cell_centers()
    r = np.hypot(x, z)
    extent = math.hypot(grid.extent_length_m, grid.extent_width_m / 2.0)

    data[~visibility_mask(grid, diff, boxes)] = 0.0

    if diff.dropout_far > 0.0 or diff.dropout_near > 0.0:
        p = diff.dropout_near + (diff.dropout_far - diff.dropout_near) * (r / extent)
        data[rng.random(r.shape) < p] = 0.0

    occupied = data.sum(axis=2) > 0.0
    if diff.flip_far > 0.0:
        flip = occupied & (rng.random(r.shape) < diff.flip_far * (r / extent))
        if np.any(flip):
            new_cls = rng.integers(0, data.shape[2], size=int(flip.sum()))
            data[flip] = 0.0
            data[flip.nonzero()[0], flip.nonzero()[1], new_cls] = 1.0

    if diff.noise_far > 0.0:
        lam = np.clip(diff.noise_far * (r / extent), 0.0, 1.0)[..., None]
        uniform = occupied[..., None] / float(data.shape[2])
        data = np.where(occupied[..., None], (1.0 - lam) * data + lam * uniform, data)

    return TopViewMap(grid, data)


def degrade_global(gt: TopViewMap, diff: DifficultyConfig, rng) -> TopViewMap:
    """Sequence-level corruption: contiguous holes plus even thinning to a density."""
    if diff.density >= 1.0:
        return gt.copy()
    grid = gt.grid
    data = gt.data.copy()
    occ = data.sum(axis=2) > 0.0
    rows, cols = occ.nonzero()
    n = rows.size
    if diff.density <= 0.0 or n == 0:
        return TopViewMap(grid, np.zeros_like(data))
    target = int(round(diff.density * n))

    alive = np.ones(n, dtype=bool)
    budget = n - target
    for _ in range(diff.hole_count):
        if budget <= 0:
            break
        pick = int(rng.integers(0, n))
        rad = diff.hole_radius_cells * rng.uniform(0.6, 1.4)
        inside = alive & (np.hypot(rows - rows[pick], cols - cols[pick]) <= rad)
        idx = inside.nonzero()[0]
        if idx.size > budget:
            idx = idx[rng.permutation(idx.size)[:budget]]
        alive[idx] = False
        budget -= idx.size

    # Stratified thinning: per 4x4 block quotas keep survivors spatially even.
    n_alive = int(alive.sum())
    if n_alive > target:
        drop_total = n_alive - target
        block = (rows // 4) * ((grid.width_px + 3) // 4) + cols // 4
        alive_idx = alive.nonzero()[0]
        blk = block[alive_idx]
        order = np.argsort(blk, kind="stable")
        alive_idx = alive_idx[order]
        blk = blk[order]
        uniq, counts = np.unique(blk, return_counts=True)
        quota = counts.astype(float) * drop_total / n_alive
        take = np.floor(quota).astype(int)
        rem = drop_total - int(take.sum())
        if rem > 0:
            frac_order = np.argsort(-(quota - take), kind="stable")[:rem]
            take[frac_order] += 1
        start = 0
        for k in range(uniq.size):
            cnt = counts[k]
            if take[k] > 0:
                seg = alive_idx[start:start + cnt]
                alive[rng.permutation(seg)[: take[k]]] = False
            start += cnt
    dead = ~alive
    data[rows[dead], cols[dead]] = 0.0
    return TopViewMap(grid, data)


def augment_batch(
    gt: np.ndarray,
    keep: np.ndarray,
    grid: GridSpec,
    diff: DifficultyConfig,
    u: np.ndarray,
    rng: np.random.Generator,
) -> np.ndarray:
    """Fresh fused degradations of a batch of GT maps at per-item strengths.

    gt is (N, H, W, C), keep the per-frame structural visibility (N, H, W),
    and u the per-item strength in [0, 1] scaling every stochastic rate.
    At u = 0 the fused output equals the GT map (the sequence-level source
    stays complete and wins the fuse). The sequence-level thinning here is
    independent per cell rather than block-stratified; augmentation only
    needs variety, not the emitted dataset's exact spatial statistics.
    Returns fused (N, H, W, C) inputs ready to stack with an object channel.
    """
    n, h, w, c = gt.shape
    u = np.asarray(u, dtype=np.float64).reshape(n, 1, 1)
    x, z = grid.cell_centers()
    rel = np.hypot(x, z) / math.hypot(grid.extent_length_m, grid.extent_width_m / 2.0)

    local = np.where(keep[..., None], gt, 0.0)
    p = u * (diff.dropout_near + (diff.dropout_far - diff.dropout_near) * rel)
    local[rng.random((n, h, w)) < p] = 0.0
    occupied = local.sum(axis=3) > 0.0
    if diff.flip_far > 0.0:
        flip = occupied & (rng.random((n, h, w)) < u * diff.flip_far * rel)
        if np.any(flip):
            idx = flip.nonzero()
            new_cls = rng.integers(0, c, size=idx[0].size)
            local[flip] = 0.0
            local[idx[0], idx[1], idx[2], new_cls] = 1.0
    if diff.noise_far > 0.0:
        lam = np.clip(u * diff.noise_far * rel, 0.0, 1.0)[..., None]
        uniform = occupied[..., None] / float(c)
        local = np.where(occupied[..., None], (1.0 - lam) * local + lam * uniform, local)

    glob = gt.copy()
    drop = np.zeros((n, h, w), dtype=bool)
    rr = np.arange(h)[None, :, None]
    cc = np.arange(w)[None, None, :]
    for _ in range(diff.hole_count):
        hr = rng.integers(0, h, size=n)[:, None, None]
        hc = rng.integers(0, w, size=n)[:, None, None]
        rad = (diff.hole_radius_cells * rng.uniform(0.6, 1.4, size=n))[:, None, None] * u
        drop |= (rr - hr) ** 2 + (cc - hc) ** 2 <= rad**2
    density = 1.0 - u * (1.0 - diff.density)
    drop |= rng.random((n, h, w)) >= density
    glob[drop] = 0.0

    glob_hit = glob.sum(axis=3, keepdims=True) > 0.0
    return np.where(glob_hit, glob, local)


# Point-cloud path ------------------------------------------------------------


@dataclass
class CloudSample:
    cloud: ReconPointCloud
    labels: np.ndarray  # (N,) int ground-truth class per point
    sems: dict  # frame_id -> (img_h, img_w, C) one-hot semantics
    img_hw: tuple


def make_point_cloud(
    attrs0: A.SceneAttributes,
    poses,
    grid: GridSpec,
    rng,
    vote_corruption: float = 0.0,
    img_hw=(96, 128),
    focal: float = 80.0,
    cam_range=(1.0, 80.0),
) -> CloudSample:
    """Lift the frame-0 scene to labeled 3D points with per-frame visibility.

    Each frame owns the pixels where its reprojection is nearest; a corrupted
    vote resamples the one-hot class uniformly over all classes.
    """
    travel = sum(
        math.hypot(p.center[0] - q.center[0], p.center[1] - q.center[1])
        for p, q in zip(poses[1:], poses[:-1])
    )
    extra_rows = int(math.ceil((travel + 2.0) / grid.cell_h))
    extra_cols = 2 * int(math.ceil(4.0 / grid.cell_w / 2.0))
    ext = GridSpec(
        grid.height_px + extra_rows,
        grid.width_px + extra_cols,
        grid.extent_length_m + extra_rows * grid.cell_h,
        grid.extent_width_m + extra_cols * grid.cell_w,
    )
    world = render(attrs0, ext)
    labels_map = world.labels()
    occ_r, occ_c = (labels_map >= 0).nonzero()
    xs, zs = ext.cell_centers()
    px = xs[occ_r, occ_c] + rng.uniform(-0.45, 0.45, occ_r.size) * ext.cell_w
    py = zs[occ_r, occ_c] + rng.uniform(-0.45, 0.45, occ_r.size) * ext.cell_h
    pz = rng.normal(0.0, 0.02, occ_r.size)
    pts = np.stack([px, py, pz], axis=1)
    labels = labels_map[occ_r, occ_c]

    img_h, img_w = img_hw
    cx, cy = img_w / 2.0, img_h / 2.0
    n_cls = BACKGROUND_CLASSES
    sems = {}
    visibility = [[] for _ in range(pts.shape[0])]
    for pose in poses:
        cam = pose.world_to_camera(pts)
        zc = cam[:, 2]
        ok = (zc > cam_range[0]) & (zc < cam_range[1])
        u = np.full(zc.shape, -1, dtype=np.int64)
        v = np.full(zc.shape, -1, dtype=np.int64)
        u[ok] = np.floor(focal * cam[ok, 0] / zc[ok] + cx).astype(np.int64)
        v[ok] = np.floor(focal * cam[ok, 1] / zc[ok] + cy).astype(np.int64)
        ok &= (u >= 0) & (u < img_w) & (v >= 0) & (v < img_h)
        idx = ok.nonzero()[0]
        if idx.size == 0:
            sems[pose.frame_id] = np.zeros((img_h, img_w, n_cls))
            continue
        order = idx[np.argsort(-zc[idx], kind="stable")]  # nearest written last
        owner = np.full(img_h * img_w, -1, dtype=np.int64)
        owner[v[order] * img_w + u[order]] = order
        owned_pix = (owner >= 0).nonzero()[0]
        owned_pt = owner[owned_pix]
        cls = labels[owned_pt].copy()
        if vote_corruption > 0.0:
            hit = rng.random(cls.size) < vote_corruption
            cls[hit] = rng.integers(0, n_cls, size=int(hit.sum()))
        sem = np.zeros((img_h * img_w, n_cls))
        sem[owned_pix, cls] = 1.0
        sems[pose.frame_id] = sem.reshape(img_h, img_w, n_cls)
        vv, uu = owned_pix // img_w, owned_pix % img_w
        for p_i, u_i, v_i in zip(owned_pt, uu, vv):
            visibility[p_i].append((pose.frame_id, int(u_i), int(v_i)))
    return CloudSample(ReconPointCloud(pts, visibility), labels, sems, (img_h, img_w))


# Sequences and datasets ------------------------------------------------------


@dataclass
class SequenceSample:
    attrs: list
    poses: list
    gt: list  # per-frame TopViewMap
    bev: list  # degraded single-view inputs
    bevcol: list  # degraded sequence-level inputs
    boxes: list  # per-frame list[TopViewBox]
    fields: np.ndarray  # (T-1, H, W, 2)


def sample_sequence(cfg: SynthConfig, index: int) -> SequenceSample:
    rng = np.random.default_rng(np.random.SeedSequence((cfg.seed, index)))
    grid = cfg.grid()
    curved_ok = not cfg.aligned_motion
    attrs0 = sample_attributes(rng, curved_ok=curved_ok)
    if cfg.aligned_motion:
        attrs0 = attrs0.replace_continuous(A.C_ROTATION, 0.0)
    attrs, poses = evolve_sequence(attrs0, cfg.frames, cfg, rng)
    world_boxes = _sample_world_boxes(attrs0, cfg, rng)
    gt, bev, bevcol, boxes = [], [], [], []
    for t in range(cfg.frames):
        gt_t = render(attrs[t], grid)
        frame_boxes = _boxes_in_frame(world_boxes, poses[t])
        gt.append(gt_t)
        bev.append(degrade_local(gt_t, cfg.difficulty, rng, frame_boxes))
        bevcol.append(degrade_global(gt_t, cfg.difficulty, rng))
        boxes.append(frame_boxes)
    fields = displacement_fields(poses, grid)
    return SequenceSample(attrs, poses, gt, bev, bevcol, boxes, fields)


def _write_sequence(seq_dir: str, sample: SequenceSample):
    os.makedirs(seq_dir, exist_ok=True)
    for t, (at, gt_t, bev_t, col_t, box_t) in enumerate(
        zip(sample.attrs, sample.gt, sample.bev, sample.bevcol, sample.boxes)
    ):
        stem = os.path.join(seq_dir, "frame_%03d" % t)
        with open(stem + ".attrs.json", "w") as fh:
            fh.write(at.to_json())
        write_tvmp(stem + ".gt.tvmp", gt_t.data)
        write_tvmp(stem + ".bev.tvmp", bev_t.data)
        write_tvmp(stem + ".bevcol.tvmp", col_t.data)
        with open(stem + ".boxes.json", "w") as fh:
            fh.write(boxes_to_json(box_t))
    write_poses(os.path.join(seq_dir, "poses.json"), sample.poses)
    write_fields(os.path.join(seq_dir, "fields.bin"), list(sample.fields))


def emit_dataset(cfg: SynthConfig, out_dir: str) -> dict:
    """Write train/test splits; byte-identical for a given config and seed."""
    os.makedirs(out_dir, exist_ok=True)
    total = cfg.n_train + cfg.n_test
    names = ["seq_%04d" % i for i in range(total)]
    threads = max(1, int(os.environ.get("LAYOUT_THREADS", "4")))

    def build(i):
        return sample_sequence(cfg, i)

    with ThreadPoolExecutor(max_workers=threads) as pool:
        for name, sample in zip(names, pool.map(build, range(total))):
            _write_sequence(os.path.join(out_dir, name), sample)

    manifest = {
        "format_version": 1,
        "config": cfg.to_dict(),
        "config_hash": config_hash(cfg),
        "grid": [cfg.grid_h, cfg.grid_w],
        "frames": cfg.frames,
        "train": names[: cfg.n_train],
        "test": names[cfg.n_train :],
    }
    with open(os.path.join(out_dir, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True)
        fh.write("\n")
    return manifest


@dataclass
class SequenceRecord:
    attrs: list
    gt: np.ndarray  # (T, H, W, C)
    bev: np.ndarray
    bevcol: np.ndarray
    boxes: list
    fields: np.ndarray


def load_manifest(data_dir: str) -> dict:
    with open(os.path.join(data_dir, "manifest.json")) as fh:
        return json.load(fh)


def load_dataset(data_dir: str, split: str = "train"):
    manifest = load_manifest(data_dir)
    if split not in ("train", "test"):
        raise ValueError("split must be train or test, got %r" % split)
    frames = manifest["frames"]
    records = []
    for name in manifest[split]:
        seq_dir = os.path.join(data_dir, name)
        attrs, gt, bev, col, boxes = [], [], [], [], []
        for t in range(frames):
            stem = os.path.join(seq_dir, "frame_%03d" % t)
            with open(stem + ".attrs.json") as fh:
                attrs.append(A.SceneAttributes.from_json(fh.read()))
            gt.append(read_tvmp(stem + ".gt.tvmp"))
            bev.append(read_tvmp(stem + ".bev.tvmp"))
            col.append(read_tvmp(stem + ".bevcol.tvmp"))
            with open(stem + ".boxes.json") as fh:
                boxes.append(boxes_from_json(fh.read()))
        fields = read_fields(os.path.join(seq_dir, "fields.bin"))
        records.append(
            SequenceRecord(
                attrs, np.stack(gt), np.stack(bev), np.stack(col), boxes, fields
            )
        )
    return records, manifest


def build_train_data(
    records,
    grid: GridSpec,
    sigma_scale: float = 0.02,
    difficulty: DifficultyConfig = None,
) -> TrainData:
    """Fuse stored inputs and discretize targets into training arrays.

    Passing the dataset's difficulty config additionally packs the rendered
    GT maps and per-frame visibility masks so the trainer can draw fresh
    degradations per step; without it the stored inputs are used as-is.
    """
    s = len(records)
    if s == 0:
        raise ValueError("no sequences to build training data from")
    t_frames = records[0].gt.shape[0]
    h, w = grid.height_px, grid.width_px
    n_ch = BACKGROUND_CLASSES + 1
    inputs = np.zeros((s, t_frames, n_ch, h, w))
    binary = np.zeros((s, t_frames, A.N_BINARY))
    lanes = np.zeros((s, t_frames, A.N_MULTICLASS), dtype=np.int64)
    reg = np.zeros((s, t_frames, A.N_CONTINUOUS, A.N_BINS))
    fields = np.stack([rec.fields for rec in records])
    gt = keep = mirror_ok = None
    if difficulty is not None:
        gt = np.stack([rec.gt for rec in records])
        keep = np.zeros((s, t_frames, h, w), dtype=bool)
        # A flip reverses the bend of a curved road, and it moves the median
        # strip to the right of the ego lane; neither layout is expressible
        # by the attribute set, so such sequences never mirror.
        mirror_ok = np.array(
            [
                not any(
                    at.binary[A.B_CURVED] or at.binary[A.B_MEDIAN]
                    for at in rec.attrs
                )
                for rec in records
            ]
        )
    for i, rec in enumerate(records):
        for t in range(t_frames):
            bev = TopViewMap(grid, rec.bev[t])
            col = TopViewMap(grid, rec.bevcol[t])
            stacked = build_final_input(bev, col, rec.boxes[t])
            inputs[i, t] = np.moveaxis(stacked.data, 2, 0)
            at = rec.attrs[t]
            binary[i, t] = at.binary_array()
            lanes[i, t] = at.multiclass_array()
            reg[i, t] = A.discretize_continuous(at, sigma_scale)
            if difficulty is not None:
                keep[i, t] = visibility_mask(grid, difficulty, rec.boxes[t])
    return TrainData(
        inputs, binary, lanes, reg, fields,
        gt=gt, keep=keep, mirror_ok=mirror_ok, difficulty=difficulty, grid=grid,
    )
