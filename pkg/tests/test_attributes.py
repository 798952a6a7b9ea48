import math

import numpy as np
import pytest

from roadlayout import attributes as A


def _clean(binary=None, multiclass=(1, 1), continuous=None):
    b = [False] * A.N_BINARY
    if binary:
        for i in binary:
            b[i] = True
    c = [0.0] * A.N_CONTINUOUS
    if continuous:
        for i, v in continuous.items():
            c[i] = v
    return A.SceneAttributes(tuple(b), tuple(multiclass), tuple(c))


def test_counts():
    assert A.N_BINARY == 14
    assert A.N_MULTICLASS == 2
    assert A.N_CONTINUOUS == 22
    assert A.N_BINS == 100
    assert len(A.BINARY_NAMES) == A.N_BINARY
    assert len(A.MULTICLASS_NAMES) == A.N_MULTICLASS
    assert len(A.CONTINUOUS_NAMES) == A.N_CONTINUOUS
    assert len(A.CONTINUOUS_RANGES) == A.N_CONTINUOUS


def test_constructor_validation():
    with pytest.raises(ValueError):
        A.SceneAttributes((True,) * 13, (1, 1), (0.0,) * 22)
    with pytest.raises(ValueError):
        A.SceneAttributes((False,) * 14, (1, 7), (0.0,) * 22)
    with pytest.raises(ValueError):
        _clean(continuous={A.C_ROTATION: 2.0})
    with pytest.raises(ValueError):
        _clean(continuous={A.C_DIST_XWALK: -1.0})
    with pytest.raises(ValueError):
        _clean(continuous={A.C_CURVE_RADIUS: float("nan")})


def test_validate_clean_scene_has_no_conflicts():
    assert A.validate(_clean()) == []


def test_validate_rule_ids():
    cases = [
        ("R1", _clean([A.B_XWALK_LEFT_ROAD])),
        ("R2", _clean([A.B_XWALK_RIGHT_ROAD])),
        ("R3", _clean([A.B_XWALK_BEFORE])),
        ("R4", _clean([A.B_XWALK_AFTER])),
        ("R5", _clean(continuous={A.C_LEFT_ROAD_WIDTH: 3.0})),
        ("R6", _clean(continuous={A.C_RIGHT_ROAD_WIDTH: 3.0})),
        ("R7", _clean(continuous={A.C_DIST_LEFT_ROAD: 10.0})),
        ("R8", _clean(continuous={A.C_DIST_RIGHT_ROAD: 10.0})),
    ]
    for rule, attrs in cases:
        found = A.validate(attrs)
        assert len(found) == 1, rule
        assert found[0].rule.startswith(rule), found[0]


def test_validate_satisfied_dependencies():
    ok = _clean(
        [A.B_SIDE_ROAD_LEFT, A.B_XWALK_LEFT_ROAD, A.B_XWALK_BEFORE],
        continuous={A.C_LEFT_ROAD_WIDTH: 4.0, A.C_DIST_LEFT_ROAD: 12.0},
    )
    assert A.validate(ok) == []


def test_validate_reports_all_conflicts_sorted():
    bad = _clean(
        [A.B_XWALK_LEFT_ROAD, A.B_XWALK_RIGHT_ROAD],
        continuous={A.C_LEFT_ROAD_WIDTH: 2.0, A.C_RIGHT_ROAD_WIDTH: 2.0},
    )
    rules = [c.rule for c in A.validate(bad)]
    assert rules == sorted(rules)
    assert len(rules) == 4


def test_json_round_trip_exact():
    rng = np.random.default_rng(0)
    for _ in range(50):
        b = tuple(bool(x) for x in rng.integers(0, 2, A.N_BINARY))
        m = tuple(int(x) for x in rng.integers(0, 7, A.N_MULTICLASS))
        c = []
        for lo, hi in A.CONTINUOUS_RANGES:
            c.append(float(rng.uniform(max(lo, 0.0), hi)))
        c[A.C_ROTATION] = float(rng.uniform(-math.pi / 2, math.pi / 2))
        attrs = A.SceneAttributes(b, m, tuple(c))
        back = A.SceneAttributes.from_json(attrs.to_json())
        assert back == attrs
        # serialized floats must survive bit for bit
        assert back.continuous_array().tobytes() == attrs.continuous_array().tobytes()


def test_bin_centers_cover_range():
    lo, hi = 0.0, 60.0
    centers = A.bin_centers(lo, hi)
    assert centers.shape == (A.N_BINS,)
    width = (hi - lo) / A.N_BINS
    assert abs(centers[0] - (lo + width / 2)) < 1e-12
    assert abs(centers[-1] - (hi - width / 2)) < 1e-12
    assert np.allclose(np.diff(centers), width)


def test_default_sigma_is_two_percent_of_range():
    assert abs(A.default_sigma(0.0, 60.0) - 1.2) < 1e-12
    assert abs(A.default_sigma(-1.0, 1.0) - 0.04) < 1e-12


def test_discretize_mass_and_peak():
    dist = A.discretize(30.0, 0.0, 60.0)
    assert abs(dist.probs.sum() - 1.0) < 1e-9
    centers = dist.bin_centers()
    peak = centers[np.argmax(dist.probs)]
    assert abs(peak - 30.0) <= (60.0 / A.N_BINS)


def test_discretize_decode_within_one_bin():
    # systematic sweep per attribute range, decode must land within a bin width
    for lo, hi in ((0.0, 60.0), (-math.pi / 2, math.pi / 2), (0.0, 15.0)):
        width = (hi - lo) / A.N_BINS
        values = np.linspace(lo, hi, 101)
        for v in values:
            dist = A.discretize(float(v), lo, hi)
            back = A.decode(dist)
            assert abs(back - v) <= width + 1e-12, (v, back, lo, hi)


def test_discretize_clamps_out_of_range():
    dist_lo = A.discretize(-5.0, 0.0, 60.0)
    dist_hi = A.discretize(65.0, 0.0, 60.0)
    assert np.argmax(dist_lo.probs) == 0
    assert np.argmax(dist_hi.probs) == A.N_BINS - 1


def test_discretize_continuous_shape_and_decode():
    rng = np.random.default_rng(7)
    for _ in range(10):
        c = []
        for lo, hi in A.CONTINUOUS_RANGES:
            c.append(float(rng.uniform(max(lo, 0.0), hi)))
        c[A.C_ROTATION] = float(rng.uniform(-1.5, 1.5))
        attrs = _clean(continuous=dict(enumerate(c)))
        probs = A.discretize_continuous(attrs)
        assert probs.shape == (A.N_CONTINUOUS, A.N_BINS)
        assert np.allclose(probs.sum(axis=1), 1.0, atol=1e-9)
        decoded = A.decode_bins(probs)
        for i, (lo, hi) in enumerate(A.CONTINUOUS_RANGES):
            width = (hi - lo) / A.N_BINS
            assert abs(decoded[i] - c[i]) <= width + 1e-12, A.CONTINUOUS_NAMES[i]


def test_decode_bins_expectation_mode():
    probs = np.zeros((1, A.N_BINS))
    probs[0, 10] = 0.5
    probs[0, 12] = 0.5
    lo, hi = A.CONTINUOUS_RANGES[0]
    centers = A.bin_centers(lo, hi)
    out = A.decode_bins(np.tile(probs, (A.N_CONTINUOUS, 1)), mode="expect")
    assert abs(out[0] - 0.5 * (centers[10] + centers[12])) < 1e-12


def test_replace_continuous_returns_new_object():
    base = _clean()
    other = base.replace_continuous(A.C_DIST_XWALK, 9.0)
    assert base.continuous[A.C_DIST_XWALK] == 0.0
    assert other.continuous[A.C_DIST_XWALK] == 9.0
    assert other.binary == base.binary
