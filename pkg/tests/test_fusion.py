import math

import numpy as np
import pytest

from roadlayout.fusion import (
    Orientation,
    TopViewBox,
    boxes_from_json,
    boxes_to_json,
    build_final_input,
    classify_orientation,
    fuse,
)
from roadlayout.grid import GridSpec, TopViewMap


def _random_map(rng, grid, density=0.6):
    labels = rng.integers(-1, 4, size=(grid.height_px, grid.width_px))
    keep = rng.random((grid.height_px, grid.width_px)) < density
    data = np.zeros((grid.height_px, grid.width_px, 4))
    for cls in range(4):
        data[:, :, cls] = (labels == cls) & keep
    return TopViewMap(grid, data)


def test_fuse_identities():
    grid = GridSpec(16, 8)
    rng = np.random.default_rng(0)
    zero = TopViewMap(grid, np.zeros((16, 8, 4)))
    for _ in range(20):
        m = _random_map(rng, grid)
        g = _random_map(rng, grid)
        assert np.array_equal(fuse(m, zero).data, m.data)
        assert np.array_equal(fuse(zero, g).data, g.data)
        assert np.array_equal(fuse(m, m).data, m.data)


def test_fuse_sequence_map_wins_where_present():
    grid = GridSpec(4, 4)
    m = np.zeros((4, 4, 4))
    g = np.zeros((4, 4, 4))
    m[0, 0, 1] = 1.0  # single-frame says sidewalk
    g[0, 0, 0] = 1.0  # sequence map says road
    m[1, 1, 2] = 1.0  # only the single-frame map has this cell
    fused = fuse(TopViewMap(grid, m), TopViewMap(grid, g))
    assert fused.data[0, 0, 0] == 1.0 and fused.data[0, 0, 1] == 0.0
    assert fused.data[1, 1, 2] == 1.0


def test_fuse_rejects_grid_mismatch():
    a = TopViewMap(GridSpec(4, 4), np.zeros((4, 4, 4)))
    b = TopViewMap(GridSpec(8, 4), np.zeros((8, 4, 4)))
    with pytest.raises(ValueError):
        fuse(a, b)


def test_orientation_reference_angles():
    assert classify_orientation(0.0) is Orientation.FRONTAL
    assert classify_orientation(math.pi) is Orientation.FRONTAL
    assert classify_orientation(math.pi / 2.0) is Orientation.SIDE
    assert classify_orientation(-math.pi / 2.0) is Orientation.SIDE
    # inclusive 45 degree boundary
    assert classify_orientation(math.pi / 4.0) is Orientation.FRONTAL
    assert classify_orientation(math.pi / 4.0 + 1e-6) is Orientation.SIDE


def test_orientation_period_pi():
    rng = np.random.default_rng(1)
    yaws = rng.uniform(-12.0, 12.0, 10000)
    for yaw in yaws:
        a = classify_orientation(float(yaw))
        b = classify_orientation(float(yaw) + math.pi)
        c = classify_orientation(float(yaw) - math.pi)
        assert a is b is c


def test_orientation_rejects_non_finite():
    with pytest.raises(ValueError):
        classify_orientation(float("nan"))


def test_boxes_json_round_trip():
    rng = np.random.default_rng(2)
    boxes = [
        TopViewBox(
            cx=float(rng.uniform(-10, 10)),
            cz=float(rng.uniform(0, 50)),
            length=float(rng.uniform(3, 6)),
            width=float(rng.uniform(1.5, 2.5)),
            yaw=float(rng.uniform(-3, 3)),
        )
        for _ in range(5)
    ]
    back = boxes_from_json(boxes_to_json(boxes))
    assert back == boxes
    assert boxes_to_json(back) == boxes_to_json(boxes)
    assert boxes_from_json("[]") == []


def test_build_final_input_has_object_channel():
    grid = GridSpec(32, 16)
    rng = np.random.default_rng(3)
    m = _random_map(rng, grid)
    g = _random_map(rng, grid)
    box = TopViewBox(cx=0.0, cz=30.0, length=4.0, width=2.0, yaw=0.0)
    out = build_final_input(m, g, [box], grid)
    assert out.data.shape == (32, 16, 5)
    assert np.array_equal(out.data[:, :, :4], fuse(m, g).data)
    assert out.data[:, :, 4].sum() > 0
    empty = build_final_input(m, g, [], grid)
    assert empty.data[:, :, 4].sum() == 0
