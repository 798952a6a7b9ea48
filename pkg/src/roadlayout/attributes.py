"""Parametric scene description: 14 binary, 2 multiclass, 22 continuous attributes.

The continuous block holds (in order): road rotation angle, right/left side-road
widths, median width, right/left side-road distances, standalone-crosswalk
distance, road-sidewalk gap width, curve radius, then 13 lane-width slots
(6 left lanes adjacent-to-ego outward, the ego lane, 6 right lanes). Slots that
do not apply to a scene carry 0.
"""

import json
import math
from dataclasses import dataclass

import numpy as np

N_BINARY = 14
N_MULTICLASS = 2
N_CONTINUOUS = 22
MAX_LANES_PER_SIDE = 6
N_BINS = 100

SCHEMA_VERSION = 1

# Binary attribute indices.
B_CURVED = 0
B_ONE_WAY = 1
B_MEDIAN = 2
B_SIDEWALK_GAP = 3
B_SIDEWALK_LEFT = 4
B_SIDEWALK_RIGHT = 5
B_XWALK_BEFORE = 6
B_XWALK_AFTER = 7
B_XWALK_LEFT_ROAD = 8
B_XWALK_RIGHT_ROAD = 9
B_XWALK_MAIN = 10
B_SIDE_ROAD_LEFT = 11
B_SIDE_ROAD_RIGHT = 12
B_ROAD_ENDS = 13

# Multiclass attribute indices (lane counts beside the ego lane, 0..6).
M_LANES_LEFT = 0
M_LANES_RIGHT = 1

# Continuous attribute indices.
C_ROTATION = 0
C_RIGHT_ROAD_WIDTH = 1
C_LEFT_ROAD_WIDTH = 2
C_MEDIAN_WIDTH = 3
C_DIST_RIGHT_ROAD = 4
C_DIST_LEFT_ROAD = 5
C_DIST_XWALK = 6
C_SIDEWALK_GAP_WIDTH = 7
C_CURVE_RADIUS = 8
C_LANE_LEFT0 = 9     # left lanes, adjacent to ego first
C_LANE_EGO = 15
C_LANE_RIGHT0 = 16   # right lanes, adjacent to ego first

BINARY_NAMES = (
    "curved",
    "one_way",
    "median",
    "sidewalk_gap",
    "sidewalk_left",
    "sidewalk_right",
    "crosswalk_before_intersection",
    "crosswalk_after_intersection",
    "crosswalk_left_side_road",
    "crosswalk_right_side_road",
    "crosswalk_standalone",
    "side_road_left",
    "side_road_right",
    "road_ends_after_intersection",
)

MULTICLASS_NAMES = ("lanes_left", "lanes_right")

CONTINUOUS_NAMES = (
    "rotation",
    "right_road_width",
    "left_road_width",
    "median_width",
    "dist_right_road",
    "dist_left_road",
    "dist_crosswalk",
    "sidewalk_gap_width",
    "curve_radius",
    "lane_w_left1",
    "lane_w_left2",
    "lane_w_left3",
    "lane_w_left4",
    "lane_w_left5",
    "lane_w_left6",
    "lane_w_ego",
    "lane_w_right1",
    "lane_w_right2",
    "lane_w_right3",
    "lane_w_right4",
    "lane_w_right5",
    "lane_w_right6",
)

_ANGLE = (-math.pi / 2.0, math.pi / 2.0)
_DIST = (0.0, 60.0)
_WIDTH = (0.0, 15.0)

# (lo, hi) per continuous attribute, aligned with CONTINUOUS_NAMES.
CONTINUOUS_RANGES = (
    _ANGLE,
    _WIDTH,  # right_road_width
    _WIDTH,  # left_road_width
    _WIDTH,  # median_width
    _DIST,   # dist_right_road
    _DIST,   # dist_left_road
    _DIST,   # dist_crosswalk
    _WIDTH,  # sidewalk_gap_width
    _DIST,   # curve_radius
) + (_WIDTH,) * 13


@dataclass(frozen=True)
class AttributeSpec:
    """Static description of one attribute slot."""

    index: int
    name: str
    group: str  # "binary" | "multiclass" | "continuous"
    lo: float = 0.0
    hi: float = 1.0


def build_schema():
    specs = []
    for i, name in enumerate(BINARY_NAMES):
        specs.append(AttributeSpec(i, name, "binary"))
    for i, name in enumerate(MULTICLASS_NAMES):
        specs.append(AttributeSpec(i, name, "multiclass", 0, MAX_LANES_PER_SIDE))
    for i, name in enumerate(CONTINUOUS_NAMES):
        lo, hi = CONTINUOUS_RANGES[i]
        specs.append(AttributeSpec(i, name, "continuous", lo, hi))
    return tuple(specs)


SCHEMA = build_schema()


def _fmt17(v: float) -> str:
    # 17 significant digits round-trip any float64 exactly.
    return format(float(v), ".17g")


@dataclass(frozen=True)
class SceneAttributes:
    """One frame's scene description; immutable."""

    binary: tuple
    multiclass: tuple
    continuous: tuple

    def __post_init__(self):
        if len(self.binary) != N_BINARY:
            raise ValueError("need %d binary attributes" % N_BINARY)
        if len(self.multiclass) != N_MULTICLASS:
            raise ValueError("need %d multiclass attributes" % N_MULTICLASS)
        if len(self.continuous) != N_CONTINUOUS:
            raise ValueError("need %d continuous attributes" % N_CONTINUOUS)
        object.__setattr__(self, "binary", tuple(bool(b) for b in self.binary))
        object.__setattr__(self, "multiclass", tuple(int(m) for m in self.multiclass))
        object.__setattr__(self, "continuous", tuple(float(c) for c in self.continuous))
        for m in self.multiclass:
            if not 0 <= m <= MAX_LANES_PER_SIDE:
                raise ValueError("lane count %d outside 0..%d" % (m, MAX_LANES_PER_SIDE))
        for i, c in enumerate(self.continuous):
            if not math.isfinite(c):
                raise ValueError("continuous attribute %s is not finite" % CONTINUOUS_NAMES[i])
            if i != C_ROTATION and c < 0.0:
                raise ValueError("continuous attribute %s must be >= 0" % CONTINUOUS_NAMES[i])
        rot = self.continuous[C_ROTATION]
        if not _ANGLE[0] <= rot <= _ANGLE[1]:
            raise ValueError("rotation %g outside [-pi/2, pi/2]" % rot)

    @classmethod
    def from_arrays(cls, binary, multiclass, continuous) -> "SceneAttributes":
        return cls(tuple(binary), tuple(multiclass), tuple(continuous))

    def binary_array(self) -> np.ndarray:
        return np.array(self.binary, dtype=np.float64)

    def multiclass_array(self) -> np.ndarray:
        return np.array(self.multiclass, dtype=np.int64)

    def continuous_array(self) -> np.ndarray:
        return np.array(self.continuous, dtype=np.float64)

    def replace_continuous(self, index: int, value: float) -> "SceneAttributes":
        cont = list(self.continuous)
        cont[index] = value
        return SceneAttributes(self.binary, self.multiclass, tuple(cont))

    def to_json(self) -> str:
        parts = [
            '"binary": [%s]' % ", ".join("true" if b else "false" for b in self.binary),
            '"multiclass": [%s]' % ", ".join(str(m) for m in self.multiclass),
            '"continuous": [%s]' % ", ".join(_fmt17(c) for c in self.continuous),
            '"schema_version": %d' % SCHEMA_VERSION,
        ]
        return "{" + ", ".join(parts) + "}"

    @classmethod
    def from_json(cls, text: str) -> "SceneAttributes":
        obj = json.loads(text)
        if obj.get("schema_version") != SCHEMA_VERSION:
            raise ValueError("unsupported schema_version %r" % obj.get("schema_version"))
        return cls(tuple(obj["binary"]), tuple(obj["multiclass"]), tuple(obj["continuous"]))


@dataclass(frozen=True)
class Conflict:
    """One violated dependency between attributes."""

    rule: str
    message: str

    def __str__(self):
        return "%s: %s" % (self.rule, self.message)


def validate(attrs: SceneAttributes):
    """Dependency check; returns conflicts sorted by rule id, [] when clean."""
    b = attrs.binary
    c = attrs.continuous
    found = []

    def hit(rule, message):
        found.append(Conflict(rule, message))

    if b[B_XWALK_LEFT_ROAD] and not b[B_SIDE_ROAD_LEFT]:
        hit("R1_xwalk_left_needs_left_road",
            "crosswalk on left side road without a left side road")
    if b[B_XWALK_RIGHT_ROAD] and not b[B_SIDE_ROAD_RIGHT]:
        hit("R2_xwalk_right_needs_right_road",
            "crosswalk on right side road without a right side road")
    any_side = b[B_SIDE_ROAD_LEFT] or b[B_SIDE_ROAD_RIGHT]
    if b[B_XWALK_BEFORE] and not any_side:
        hit("R3_xwalk_before_needs_intersection",
            "crosswalk before intersection without any side road")
    if b[B_XWALK_AFTER] and not any_side:
        hit("R4_xwalk_after_needs_intersection",
            "crosswalk after intersection without any side road")
    if c[C_LEFT_ROAD_WIDTH] > 0.0 and not b[B_SIDE_ROAD_LEFT]:
        hit("R5_left_width_needs_left_road",
            "left side-road width %g without a left side road" % c[C_LEFT_ROAD_WIDTH])
    if c[C_RIGHT_ROAD_WIDTH] > 0.0 and not b[B_SIDE_ROAD_RIGHT]:
        hit("R6_right_width_needs_right_road",
            "right side-road width %g without a right side road" % c[C_RIGHT_ROAD_WIDTH])
    if c[C_DIST_LEFT_ROAD] > 0.0 and not b[B_SIDE_ROAD_LEFT]:
        hit("R7_left_dist_needs_left_road",
            "left side-road distance %g without a left side road" % c[C_DIST_LEFT_ROAD])
    if c[C_DIST_RIGHT_ROAD] > 0.0 and not b[B_SIDE_ROAD_RIGHT]:
        hit("R8_right_dist_needs_right_road",
            "right side-road distance %g without a right side road" % c[C_DIST_RIGHT_ROAD])

    return sorted(found, key=lambda cf: cf.rule)


@dataclass(frozen=True)
class BinDistribution:
    """Probability mass over N_BINS equal-width bins spanning [lo, hi]."""

    probs: np.ndarray
    lo: float
    hi: float

    def __post_init__(self):
        probs = np.asarray(self.probs, dtype=np.float64)
        if probs.shape != (N_BINS,):
            raise ValueError("need exactly %d bins" % N_BINS)
        if abs(probs.sum() - 1.0) > 1e-9:
            raise ValueError("bin mass %.12g != 1" % probs.sum())
        object.__setattr__(self, "probs", probs)

    def bin_centers(self) -> np.ndarray:
        return bin_centers(self.lo, self.hi)


def bin_centers(lo: float, hi: float) -> np.ndarray:
    width = (hi - lo) / N_BINS
    return lo + (np.arange(N_BINS) + 0.5) * width


def default_sigma(lo: float, hi: float) -> float:
    return 0.02 * (hi - lo)


def discretize(value: float, lo: float, hi: float, sigma: float = None) -> BinDistribution:
    """Gaussian mass centered on the (clamped) value, sampled at bin centers."""
    if not math.isfinite(value):
        raise ValueError("cannot discretize non-finite value %r" % value)
    if hi <= lo:
        raise ValueError("empty range [%g, %g]" % (lo, hi))
    if sigma is None:
        sigma = default_sigma(lo, hi)
    if sigma <= 0.0:
        raise ValueError("sigma must be positive")
    v = min(max(value, lo), hi)
    centers = bin_centers(lo, hi)
    # Relative densities; the normalizer cancels when renormalizing.
    logd = -0.5 * ((centers - v) / sigma) ** 2
    dens = np.exp(logd - logd.max())
    return BinDistribution(dens / dens.sum(), lo, hi)


def decode(dist: BinDistribution) -> float:
    """Strongest bin's center.

    The peak stays within half a bin of any in-range value; an expectation
    would drift inward near the range edges where the mass is truncated.
    """
    return float(dist.bin_centers()[int(np.argmax(dist.probs))])


def discretize_continuous(attrs: SceneAttributes, sigma_scale: float = 0.02) -> np.ndarray:
    """(N_CONTINUOUS, N_BINS) training-target matrix for one frame."""
    out = np.zeros((N_CONTINUOUS, N_BINS))
    for i, value in enumerate(attrs.continuous):
        lo, hi = CONTINUOUS_RANGES[i]
        out[i] = discretize(value, lo, hi, sigma_scale * (hi - lo)).probs
    return out


def decode_bins(probs: np.ndarray, mode: str = "argmax") -> np.ndarray:
    """Continuous values from (N_CONTINUOUS, N_BINS) bin scores.

    "argmax" snaps to the strongest bin center, "expect" integrates.
    """
    probs = np.asarray(probs, dtype=np.float64)
    if probs.shape != (N_CONTINUOUS, N_BINS):
        raise ValueError("expected (%d, %d) bin scores" % (N_CONTINUOUS, N_BINS))
    out = np.zeros(N_CONTINUOUS)
    for i in range(N_CONTINUOUS):
        lo, hi = CONTINUOUS_RANGES[i]
        centers = bin_centers(lo, hi)
        if mode == "argmax":
            out[i] = centers[int(np.argmax(probs[i]))]
        elif mode == "expect":
            total = probs[i].sum()
            out[i] = float(np.dot(probs[i], centers) / total) if total > 0 else centers[0]
        else:
            raise ValueError("unknown decode mode %r" % mode)
    return out
