"""Combine the sequence-level and single-frame top views, plus object context.

The sequence-level map wins wherever it has any evidence; single-frame cells
fill the gaps. Detected objects rasterize into one extra channel, and each box
carries a coarse viewing-direction class (frontal or side) relative to the
camera's forward axis.
"""

import json
import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .grid import GridSpec, TopViewMap
from .render import render_object_layer

TWO_PI = 2.0 * math.pi


class Orientation(str, Enum):
    FRONTAL = "frontal"
    SIDE = "side"


def classify_orientation(yaw: float) -> Orientation:
    """Frontal when the heading is within 45 deg of the camera axis (either way).

    Boundaries are inclusive on the frontal side; the classification has
    period pi since a box is symmetric under 180 deg turns.
    """
    if not math.isfinite(yaw):
        raise ValueError("yaw must be finite, got %r" % (yaw,))
    a = math.fmod(yaw, TWO_PI)
    if a < 0.0:
        a += TWO_PI
    frontal = (
        a <= math.pi / 4.0
        or a >= 7.0 * math.pi / 4.0
        or (3.0 * math.pi / 4.0 <= a <= 5.0 * math.pi / 4.0)
    )
    return Orientation.FRONTAL if frontal else Orientation.SIDE


@dataclass(frozen=True)
class TopViewBox:
    """Axis lengths in meters; yaw about vertical, 0 = facing away from ego."""

    cx: float
    cz: float
    length: float
    width: float
    yaw: float

    @property
    def orientation(self) -> Orientation:
        return classify_orientation(self.yaw)


def boxes_to_json(boxes) -> str:
    records = []
    for b in boxes:
        records.append(
            {
                "cx": float(b.cx),
                "cz": float(b.cz),
                "length": float(b.length),
                "width": float(b.width),
                "yaw": float(b.yaw),
                "orientation": b.orientation.value,
            }
        )
    return json.dumps(records, sort_keys=True)


def boxes_from_json(text: str):
    return [
        TopViewBox(r["cx"], r["cz"], r["length"], r["width"], r["yaw"])
        for r in json.loads(text)
    ]


def fuse(bev: TopViewMap, bev_col: TopViewMap) -> TopViewMap:
    """Sequence map where it has evidence, single-frame map elsewhere."""
    if bev.grid != bev_col.grid or bev.channels != bev_col.channels:
        raise ValueError("fuse needs maps on the same grid with equal channels")
    col_hit = bev_col.data.max(axis=2) > 0.0
    data = np.where(col_hit[:, :, None], bev_col.data, bev.data)
    return TopViewMap(bev.grid, data)


def build_final_input(bev: TopViewMap, bev_col: TopViewMap, boxes, grid: GridSpec = None) -> TopViewMap:
    """Fused background channels plus one object-occupancy channel."""
    if grid is None:
        grid = bev.grid
    fused = fuse(bev, bev_col)
    obj = render_object_layer(boxes, grid)
    data = np.concatenate([fused.data, obj[:, :, None]], axis=2)
    return TopViewMap(grid, data)
