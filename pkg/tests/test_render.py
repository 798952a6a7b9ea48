import math

import numpy as np
import pytest

from roadlayout import attributes as A
from roadlayout import render as R
from roadlayout.grid import (
    CLASS_CROSSWALK,
    CLASS_LANE,
    CLASS_ROAD,
    CLASS_SIDEWALK,
    GridSpec,
    VOID_LABEL,
)


def _attrs(binary=None, multiclass=(1, 1), continuous=None):
    b = [False] * A.N_BINARY
    if binary:
        for i in binary:
            b[i] = True
    c = [0.0] * A.N_CONTINUOUS
    c[A.C_LANE_EGO] = 3.5
    for k in range(6):
        c[A.C_LANE_LEFT0 + k] = 3.5
        c[A.C_LANE_RIGHT0 + k] = 3.5
    if continuous:
        for i, v in continuous.items():
            c[i] = v
    return A.SceneAttributes(tuple(b), tuple(multiclass), tuple(c))


def _sample_straight(rng):
    """Random straight axis-aligned scene plus its closed-form rectangles."""
    m1 = int(rng.integers(0, 4))
    m2 = int(rng.integers(0, 4))
    widths = {A.C_LANE_EGO: float(rng.uniform(2.8, 4.4))}
    for k in range(m1):
        widths[A.C_LANE_LEFT0 + k] = float(rng.uniform(2.6, 4.4))
    for k in range(m2):
        widths[A.C_LANE_RIGHT0 + k] = float(rng.uniform(2.6, 4.4))
    flags = []
    if rng.random() < 0.6:
        flags.append(A.B_SIDEWALK_LEFT)
    if rng.random() < 0.6:
        flags.append(A.B_SIDEWALK_RIGHT)
    gap = 0.0
    if rng.random() < 0.5:
        flags.append(A.B_SIDEWALK_GAP)
        gap = float(rng.uniform(0.4, 1.8))
        widths[A.C_SIDEWALK_GAP_WIDTH] = gap
    xwalk = rng.random() < 0.5
    if xwalk:
        flags.append(A.B_XWALK_MAIN)
        widths[A.C_DIST_XWALK] = float(rng.uniform(6.0, 48.0))
    attrs = _attrs(flags, (m1, m2), widths)

    c = attrs.continuous
    ego_w = c[A.C_LANE_EGO]
    sum_left = sum(c[A.C_LANE_LEFT0 + k] for k in range(m1))
    sum_right = sum(c[A.C_LANE_RIGHT0 + k] for k in range(m2))
    lo = -ego_w / 2.0 - sum_left
    hi = ego_w / 2.0 + sum_right
    marks = []
    if m2 >= 1:
        marks.append(ego_w / 2.0)
        for k in range(1, m2):
            marks.append(ego_w / 2.0 + sum(c[A.C_LANE_RIGHT0 + j] for j in range(k)))
    if m1 >= 1:
        marks.append(-ego_w / 2.0)
        for k in range(1, m1):
            marks.append(-ego_w / 2.0 - sum(c[A.C_LANE_LEFT0 + j] for j in range(k)))

    # rectangles as (x_lo, x_hi, z_lo, z_hi) in meters
    rects = {CLASS_ROAD: [], CLASS_SIDEWALK: [], CLASS_LANE: [], CLASS_CROSSWALK: []}
    rects[CLASS_ROAD].append((lo, hi, 0.0, 60.0))
    for b in marks:
        rects[CLASS_LANE].append((b - 0.25, b + 0.25, 0.0, 60.0))
    if xwalk:
        d = c[A.C_DIST_XWALK]
        rects[CLASS_CROSSWALK].append((lo, hi, d, d + 3.0))
    if A.B_SIDEWALK_LEFT in flags:
        rects[CLASS_SIDEWALK].append((lo - gap - 2.0, lo - gap, 0.0, 60.0))
    if A.B_SIDEWALK_RIGHT in flags:
        rects[CLASS_SIDEWALK].append((hi + gap, hi + gap + 2.0, 0.0, 60.0))
    return attrs, rects


def _expected_counts(rects, grid):
    """Set-subtract the paint layers analytically; returns counts and slacks."""

    def clip(r):
        x0, x1, z0, z1 = r
        x0 = max(x0, -grid.extent_width_m / 2.0)
        x1 = min(x1, grid.extent_width_m / 2.0)
        z0 = max(z0, 0.0)
        z1 = min(z1, grid.extent_length_m)
        return (x0, x1, z0, z1) if (x1 > x0 and z1 > z0) else None

    def area(r):
        return (r[1] - r[0]) * (r[3] - r[2]) if r else 0.0

    def overlap(a, b):
        if a is None or b is None:
            return None
        r = (max(a[0], b[0]), min(a[1], b[1]), max(a[2], b[2]), min(a[3], b[3]))
        return r if (r[1] > r[0] and r[3] > r[2]) else None

    cell = grid.cell_w * grid.cell_h

    def band(r):
        if r is None:
            return 0.0
        w = (r[1] - r[0]) / grid.cell_w
        h = (r[3] - r[2]) / grid.cell_h
        return 2.0 * (w + h) + 4.0

    road = [clip(r) for r in rects[CLASS_ROAD]]
    lanes = [clip(r) for r in rects[CLASS_LANE]]
    cross = [clip(r) for r in rects[CLASS_CROSSWALK]]
    walks = [clip(r) for r in rects[CLASS_SIDEWALK]]

    a_cross = sum(area(r) for r in cross)
    a_lane = sum(area(r) for r in lanes)
    lane_cross = sum(area(overlap(l, x)) for l in lanes for x in cross)
    a_road = sum(area(r) for r in road)
    road_cross = sum(area(overlap(r, x)) for r in road for x in cross)
    # markings lie inside the road block by construction
    exp = {
        CLASS_ROAD: (a_road - a_lane - road_cross + lane_cross) / cell,
        CLASS_LANE: (a_lane - lane_cross) / cell,
        CLASS_CROSSWALK: a_cross / cell,
        CLASS_SIDEWALK: sum(area(r) for r in walks) / cell,
    }
    slack = {
        CLASS_ROAD: sum(band(r) for r in road + lanes + cross),
        CLASS_LANE: sum(band(r) for r in lanes + cross),
        CLASS_CROSSWALK: sum(band(r) for r in cross),
        CLASS_SIDEWALK: sum(band(r) for r in walks),
    }
    return exp, slack


def test_cell_counts_match_rectangle_areas():
    grid = GridSpec()
    rng = np.random.default_rng(0)
    for case in range(50):
        attrs, rects = _sample_straight(rng)
        labels = R.render(attrs, grid).labels()
        exp, slack = _expected_counts(rects, grid)
        for cls in (CLASS_ROAD, CLASS_SIDEWALK, CLASS_LANE, CLASS_CROSSWALK):
            got = int(np.sum(labels == cls))
            assert abs(got - exp[cls]) <= slack[cls], (case, cls, got, exp[cls], slack[cls])


def test_mirror_symmetry_exact():
    rng = np.random.default_rng(1)
    grid = GridSpec(64, 32)
    for _ in range(20):
        m = int(rng.integers(0, 4))
        widths = {A.C_LANE_EGO: float(rng.uniform(2.8, 4.4))}
        for k in range(m):
            w = float(rng.uniform(2.6, 4.4))
            widths[A.C_LANE_LEFT0 + k] = w
            widths[A.C_LANE_RIGHT0 + k] = w
        flags = [A.B_SIDEWALK_LEFT, A.B_SIDEWALK_RIGHT]
        if rng.random() < 0.5:
            flags.append(A.B_XWALK_MAIN)
            widths[A.C_DIST_XWALK] = float(rng.uniform(6.0, 40.0))
        attrs = _attrs(flags, (m, m), widths)
        labels = R.render(attrs, grid).labels()
        assert np.array_equal(labels, labels[:, ::-1])


def test_render_rejects_conflicting_attributes():
    bad = _attrs([A.B_XWALK_LEFT_ROAD])
    with pytest.raises(R.LayoutConflictError):
        R.render(bad)


def test_rotation_moves_mass_sideways():
    base = _attrs([], (1, 1))
    rot = _attrs([], (1, 1), {A.C_ROTATION: 0.4})
    grid = GridSpec(64, 32)
    lb = R.render(base, grid).labels()
    lr = R.render(rot, grid).labels()
    assert not np.array_equal(lb, lr)
    # same road cells when rotating by zero
    again = R.render(base, grid).labels()
    assert np.array_equal(lb, again)


def test_curved_road_bends_right():
    curved = _attrs([A.B_CURVED], (0, 0), {A.C_CURVE_RADIUS: 40.0})
    grid = GridSpec(128, 64)
    labels = R.render(curved, grid).labels()
    road_cols = np.where((labels == CLASS_ROAD).any(axis=1))[0]
    assert len(road_cols) > 0
    x, z = grid.cell_centers()
    road = labels == CLASS_ROAD
    near = road & (z < 15.0)
    far = road & (z > 25.0)
    assert far.sum() > 0
    # mean lateral position drifts toward positive x with distance
    assert x[far].mean() > x[near].mean() + 1.0


def test_side_road_paints_perpendicular_band():
    attrs = _attrs(
        [A.B_SIDE_ROAD_RIGHT],
        (0, 0),
        {A.C_DIST_RIGHT_ROAD: 20.0, A.C_RIGHT_ROAD_WIDTH: 8.0},
    )
    grid = GridSpec(128, 64)
    labels = R.render(attrs, grid).labels()
    x, z = grid.cell_centers()
    inside = (x > 4.0) & (z >= 20.5) & (z < 27.5)
    outside_band = (x > 4.0) & ((z < 19.5) | (z >= 28.5))
    assert np.all(labels[inside] == CLASS_ROAD)
    assert np.all(labels[outside_band] == VOID_LABEL)


def test_road_ends_cuts_map_after_intersection():
    attrs = _attrs(
        [A.B_SIDE_ROAD_RIGHT, A.B_ROAD_ENDS],
        (0, 0),
        {A.C_DIST_RIGHT_ROAD: 20.0, A.C_RIGHT_ROAD_WIDTH: 8.0},
    )
    grid = GridSpec(128, 64)
    labels = R.render(attrs, grid).labels()
    x, z = grid.cell_centers()
    beyond = (np.abs(x) < 1.0) & (z > 29.0)
    assert np.all(labels[beyond] == VOID_LABEL)


def test_object_layer_footprint():
    from roadlayout.fusion import TopViewBox

    grid = GridSpec(128, 64)
    box = TopViewBox(cx=0.0, cz=30.0, length=4.0, width=2.0, yaw=0.0)
    layer = R.render_object_layer([box], grid)
    x, z = grid.cell_centers()
    inside = (np.abs(x) < 0.8) & (np.abs(z - 30.0) < 1.8)
    outside = (np.abs(x) > 1.3) | (np.abs(z - 30.0) > 2.3)
    assert np.all(layer[inside] == 1.0)
    assert np.all(layer[outside] == 0.0)
    assert R.render_object_layer([], grid).sum() == 0.0
