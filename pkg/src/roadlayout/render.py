"""Deterministic top-view renderer for scene attributes.

Every cell takes the class of its center point; no anti-aliasing. Layers paint
in the order road, sidewalk, lane marking, crosswalk, so later layers win.

Geometry conventions (meters, ego at the map's bottom-center, z forward):
- The main road is a stack of lateral strips around the ego lane: left lanes,
  an optional median gap, the ego lane, right lanes. Gaps (median, road-to-
  sidewalk) stay void.
- The rotation attribute turns the whole layout about the ego position; curved
  roads bend to the right with the given centerline radius via arc coordinates.
- Side roads are perpendicular bands starting at the main road's edge; the
  intersection spans the union of their length intervals.
- Crosswalks are 3 m deep bands clipped to the road they cross.
"""

import math

import numpy as np
from PIL import Image

from . import attributes as A
from .grid import (
    BACKGROUND_CLASSES,
    CLASS_CROSSWALK,
    CLASS_LANE,
    CLASS_ROAD,
    CLASS_SIDEWALK,
    GridSpec,
    TopViewMap,
    VOID_LABEL,
    labels_to_rgb,
)

SIDEWALK_WIDTH_M = 2.0
CROSSWALK_DEPTH_M = 3.0
MARKING_WIDTH_M = 0.5
BEHIND_EGO_M = 20.0


class LayoutConflictError(ValueError):
    """Raised when attributes with dependency conflicts reach the renderer."""

    def __init__(self, conflicts):
        self.conflicts = tuple(conflicts)
        super().__init__(
            "conflicting attributes: " + "; ".join(str(c) for c in self.conflicts)
        )


def _strip_layout(attrs: A.SceneAttributes):
    """Lateral intervals and length intervals shared by all layers."""
    c = attrs.continuous
    b = attrs.binary
    m1, m2 = attrs.multiclass

    ego_w = c[A.C_LANE_EGO]
    left_ws = [c[A.C_LANE_LEFT0 + k] for k in range(m1)]
    right_ws = [c[A.C_LANE_RIGHT0 + k] for k in range(m2)]
    median_w = c[A.C_MEDIAN_WIDTH] if b[A.B_MEDIAN] else 0.0
    gap_w = c[A.C_SIDEWALK_GAP_WIDTH] if b[A.B_SIDEWALK_GAP] else 0.0

    ego_lo = -ego_w / 2.0
    ego_hi = ego_w / 2.0 + sum(right_ws)
    left_hi = ego_lo - median_w
    left_lo = left_hi - sum(left_ws)
    d_min = left_lo
    d_max = ego_hi

    side = {}
    if b[A.B_SIDE_ROAD_LEFT]:
        side["left"] = (c[A.C_DIST_LEFT_ROAD], c[A.C_DIST_LEFT_ROAD] + c[A.C_LEFT_ROAD_WIDTH])
    if b[A.B_SIDE_ROAD_RIGHT]:
        side["right"] = (c[A.C_DIST_RIGHT_ROAD], c[A.C_DIST_RIGHT_ROAD] + c[A.C_RIGHT_ROAD_WIDTH])

    if side:
        int_start = min(lo for lo, _ in side.values())
        int_end = max(hi for _, hi in side.values())
    else:
        int_start = int_end = None

    road_end = int_end if (b[A.B_ROAD_ENDS] and side) else math.inf

    # Interior lane boundaries that carry a painted marking.
    marks = []
    if m2 >= 1:
        marks.append(ego_hi - sum(right_ws))  # ego | right lane 1
        for k in range(1, m2):
            marks.append(ego_w / 2.0 + sum(right_ws[:k]))
    if m1 >= 1 and not b[A.B_MEDIAN]:
        marks.append(ego_lo)  # left lane 1 | ego
    for k in range(1, m1):
        marks.append(left_hi - sum(left_ws[:k]))

    return {
        "ego_block": (ego_lo, ego_hi),
        "left_block": (left_lo, left_hi) if m1 >= 1 else None,
        "d_min": d_min,
        "d_max": d_max,
        "gap_w": gap_w,
        "side": side,
        "int_start": int_start,
        "int_end": int_end,
        "road_end": road_end,
        "marks": marks,
    }


def _road_frame(attrs: A.SceneAttributes, x: np.ndarray, z: np.ndarray):
    """Cell centers to (lateral, along-road) coordinates."""
    rot = attrs.continuous[A.C_ROTATION]
    ct, st = math.cos(rot), math.sin(rot)
    d = ct * x + st * z
    s = -st * x + ct * z
    if attrs.binary[A.B_CURVED]:
        radius = attrs.continuous[A.C_CURVE_RADIUS]
        if radius > 0.0:
            r = np.hypot(d - radius, s)
            lateral = radius - r
            along = radius * np.arctan2(s, radius - d)
            return lateral, along
    return d, s


def _in(v, lo, hi):
    return (v >= lo) & (v < hi)


def render(attrs: A.SceneAttributes, grid: GridSpec = None) -> TopViewMap:
    """One-hot top-view map (H, W, 4) of the scene; void cells all-zero."""
    conflicts = A.validate(attrs)
    if conflicts:
        raise LayoutConflictError(conflicts)
    if grid is None:
        grid = GridSpec()

    lay = _strip_layout(attrs)
    x, z = grid.cell_centers()
    d, s = _road_frame(attrs, x, z)

    labels = np.full((grid.height_px, grid.width_px), VOID_LABEL, dtype=np.int64)
    road_s = _in(s, -BEHIND_EGO_M, lay["road_end"])

    # Road: main blocks plus perpendicular side-road bands.
    road = _in(d, *lay["ego_block"]) & road_s
    if lay["left_block"] is not None:
        road |= _in(d, *lay["left_block"]) & road_s
    if "left" in lay["side"]:
        lo, hi = lay["side"]["left"]
        road |= (d < lay["d_min"]) & _in(s, lo, hi)
    if "right" in lay["side"]:
        lo, hi = lay["side"]["right"]
        road |= (d >= lay["d_max"]) & _in(s, lo, hi)
    labels[road] = CLASS_ROAD

    # Sidewalks: flanking bands, cut where their side road passes through.
    def sidewalk_mask(edge, outward, cut):
        lo = edge + lay["gap_w"] if outward > 0 else edge - lay["gap_w"] - SIDEWALK_WIDTH_M
        band = _in(d, lo, lo + SIDEWALK_WIDTH_M) & road_s
        if cut is not None:
            band &= ~_in(s, *cut)
        return band

    if attrs.binary[A.B_SIDEWALK_LEFT]:
        labels[sidewalk_mask(lay["d_min"], -1, lay["side"].get("left"))] = CLASS_SIDEWALK
    if attrs.binary[A.B_SIDEWALK_RIGHT]:
        labels[sidewalk_mask(lay["d_max"], +1, lay["side"].get("right"))] = CLASS_SIDEWALK

    # Lane markings: skipped inside the intersection span.
    mark_s = road_s.copy()
    if lay["int_start"] is not None:
        mark_s &= ~_in(s, lay["int_start"], lay["int_end"])
    for bound in lay["marks"]:
        stripe = _in(d, bound - MARKING_WIDTH_M / 2.0, bound + MARKING_WIDTH_M / 2.0)
        labels[stripe & mark_s] = CLASS_LANE

    # Crosswalks last; each clipped to the band of the road it crosses.
    main_d = _in(d, lay["d_min"], lay["d_max"])
    b = attrs.binary
    if b[A.B_XWALK_BEFORE]:
        band = _in(s, lay["int_start"] - CROSSWALK_DEPTH_M, lay["int_start"])
        labels[main_d & band & road_s] = CLASS_CROSSWALK
    if b[A.B_XWALK_AFTER]:
        band = _in(s, lay["int_end"], lay["int_end"] + CROSSWALK_DEPTH_M)
        labels[main_d & band & road_s] = CLASS_CROSSWALK
    if b[A.B_XWALK_MAIN]:
        dist = attrs.continuous[A.C_DIST_XWALK]
        band = _in(s, dist, dist + CROSSWALK_DEPTH_M)
        labels[main_d & band & road_s] = CLASS_CROSSWALK
    if b[A.B_XWALK_LEFT_ROAD]:
        lo, hi = lay["side"]["left"]
        band = _in(d, lay["d_min"] - CROSSWALK_DEPTH_M, lay["d_min"]) & _in(s, lo, hi)
        labels[band] = CLASS_CROSSWALK
    if b[A.B_XWALK_RIGHT_ROAD]:
        lo, hi = lay["side"]["right"]
        band = _in(d, lay["d_max"], lay["d_max"] + CROSSWALK_DEPTH_M) & _in(s, lo, hi)
        labels[band] = CLASS_CROSSWALK

    data = np.zeros((grid.height_px, grid.width_px, BACKGROUND_CLASSES))
    for cls in range(BACKGROUND_CLASSES):
        data[:, :, cls] = labels == cls
    return TopViewMap(grid, data)


def render_object_layer(boxes, grid: GridSpec = None) -> np.ndarray:
    """(H, W) occupancy of oriented box footprints; cell-center containment."""
    if grid is None:
        grid = GridSpec()
    x, z = grid.cell_centers()
    layer = np.zeros((grid.height_px, grid.width_px))
    for box in boxes:
        dx = x - box.cx
        dz = z - box.cz
        hx, hz = math.sin(box.yaw), math.cos(box.yaw)  # length axis
        along = dx * hx + dz * hz
        across = dx * hz - dz * hx
        inside = (np.abs(along) <= box.length / 2.0) & (np.abs(across) <= box.width / 2.0)
        layer[inside] = 1.0
    return layer


def save_png(topview: TopViewMap, path, scale: int = 4, object_layer: np.ndarray = None):
    """Palette PNG of the map's hard labels; objects overlay in green."""
    labels = topview.labels()
    if object_layer is not None:
        labels = np.where(object_layer > 0, 4, labels)
    rgb = labels_to_rgb(labels)
    img = Image.fromarray(rgb)
    if scale != 1:
        img = img.resize((rgb.shape[1] * scale, rgb.shape[0] * scale), Image.NEAREST)
    img.save(path)
