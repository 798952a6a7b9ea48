"""Evaluation metrics over decoded attribute predictions.

Attribute accuracies average per-attribute agreement; binary F1 averages the
per-attribute F1 (zero when precision+recall is zero); continuous error is
range-normalized MSE. Map IoU renders predictions and ground truth and
averages over the classes present in either; predictions whose flags conflict
render best-effort after dropping the conflicting crosswalk/side-road flags.
Consistency metrics count rule conflicts per frame (semantic) and flag or
lane-count changes per consecutive frame pair (temporal).
"""

import json
from dataclasses import dataclass

import numpy as np

from . import attributes as A
from .grid import BACKGROUND_CLASSES, GridSpec
from .render import render

METRICS_VERSION = 1


def _stack_binary(preds):
    return np.array([p.binary for p in preds], dtype=bool)


def accu_binary(preds, gts) -> float:
    p, g = _stack_binary(preds), _stack_binary(gts)
    _need_same(p, g)
    return float((p == g).mean())


def accu_multiclass(preds, gts) -> float:
    p = np.array([x.multiclass for x in preds])
    g = np.array([x.multiclass for x in gts])
    _need_same(p, g)
    return float((p == g).mean())


def f1_binary(preds, gts):
    """Mean and per-attribute F1 over the 14 flags."""
    p, g = _stack_binary(preds), _stack_binary(gts)
    _need_same(p, g)
    tp = (p & g).sum(axis=0).astype(np.float64)
    fp = (p & ~g).sum(axis=0).astype(np.float64)
    fn = (~p & g).sum(axis=0).astype(np.float64)
    prec = np.divide(tp, tp + fp, out=np.zeros_like(tp), where=(tp + fp) > 0)
    rec = np.divide(tp, tp + fn, out=np.zeros_like(tp), where=(tp + fn) > 0)
    denom = prec + rec
    f1 = np.divide(2.0 * prec * rec, denom, out=np.zeros_like(tp), where=denom > 0)
    return float(f1.mean()), f1


def mse_continuous(preds, gts) -> float:
    """Mean squared error of range-normalized continuous attributes."""
    p = np.array([x.continuous for x in preds])
    g = np.array([x.continuous for x in gts])
    _need_same(p, g)
    spans = np.array([hi - lo for lo, hi in A.CONTINUOUS_RANGES])
    return float((((p - g) / spans) ** 2).mean())


def _need_same(p, g):
    if len(p) == 0:
        raise ValueError("metrics need at least one frame")
    if p.shape != g.shape:
        raise ValueError("prediction/ground-truth counts differ: %s vs %s" % (p.shape, g.shape))


def sanitize_for_render(attrs: A.SceneAttributes):
    """Drop conflicting crosswalk/side-road flags so the scene renders.

    Returns (clean attributes, True when anything was dropped).
    """
    if not A.validate(attrs):
        return attrs, False
    b = list(attrs.binary)
    c = list(attrs.continuous)
    if not b[A.B_SIDE_ROAD_LEFT]:
        b[A.B_XWALK_LEFT_ROAD] = False
        c[A.C_LEFT_ROAD_WIDTH] = 0.0
        c[A.C_DIST_LEFT_ROAD] = 0.0
    if not b[A.B_SIDE_ROAD_RIGHT]:
        b[A.B_XWALK_RIGHT_ROAD] = False
        c[A.C_RIGHT_ROAD_WIDTH] = 0.0
        c[A.C_DIST_RIGHT_ROAD] = 0.0
    if not (b[A.B_SIDE_ROAD_LEFT] or b[A.B_SIDE_ROAD_RIGHT]):
        b[A.B_XWALK_BEFORE] = False
        b[A.B_XWALK_AFTER] = False
    return A.SceneAttributes(tuple(b), attrs.multiclass, tuple(c)), True


def iou(preds, gts, grid: GridSpec = None):
    """Rendered-map IoU.

    Returns (mean over present classes, per-class array with -1 for classes
    absent from both, count of predictions that needed sanitizing).
    """
    if grid is None:
        grid = GridSpec()
    if len(preds) == 0 or len(preds) != len(gts):
        raise ValueError("prediction/ground-truth counts differ or are empty")
    inter = np.zeros(BACKGROUND_CLASSES)
    union = np.zeros(BACKGROUND_CLASSES)
    n_sanitized = 0
    for pred, gt in zip(preds, gts):
        pred, changed = sanitize_for_render(pred)
        n_sanitized += int(changed)
        pl = render(pred, grid).labels()
        gl = render(gt, grid).labels()
        for cls in range(BACKGROUND_CLASSES):
            inter[cls] += np.sum((pl == cls) & (gl == cls))
            union[cls] += np.sum((pl == cls) | (gl == cls))
    per = np.full(BACKGROUND_CLASSES, -1.0)
    present = union > 0
    per[present] = inter[present] / union[present]
    if not present.any():
        raise ValueError("no class present in predictions or ground truth")
    return float(per[present].mean()), per, n_sanitized


def semantic_consistency(preds) -> float:
    """Mean number of rule conflicts per predicted frame."""
    if len(preds) == 0:
        raise ValueError("metrics need at least one frame")
    return float(np.mean([len(A.validate(p)) for p in preds]))


def temporal_consistency(pred_sequences) -> float:
    """Mean flag/lane-count changes per consecutive frame pair."""
    changes = 0
    pairs = 0
    for seq in pred_sequences:
        for prev, cur in zip(seq[:-1], seq[1:]):
            changes += sum(a != b for a, b in zip(prev.binary, cur.binary))
            changes += sum(a != b for a, b in zip(prev.multiclass, cur.multiclass))
            pairs += 1
    if pairs == 0:
        raise ValueError("temporal consistency needs at least one frame pair")
    return float(changes) / pairs


@dataclass
class MetricsReport:
    accu_bi: float
    accu_mc: float
    f1_bi: float
    f1_bi_per_attr: list
    mse: float
    iou_mean: float
    iou_per_class: list
    semantic_consistency: float
    temporal_consistency: float
    n_frames: int
    n_sequences: int
    n_sanitized: int
    metrics_version: int = METRICS_VERSION

    def to_json(self) -> str:
        obj = {
            "metrics_version": self.metrics_version,
            "accu_bi": self.accu_bi,
            "accu_mc": self.accu_mc,
            "f1_bi": self.f1_bi,
            "f1_bi_per_attr": list(self.f1_bi_per_attr),
            "mse": self.mse,
            "iou_mean": self.iou_mean,
            "iou_per_class": list(self.iou_per_class),
            "semantic_consistency": self.semantic_consistency,
            "temporal_consistency": self.temporal_consistency,
            "n_frames": self.n_frames,
            "n_sequences": self.n_sequences,
            "n_sanitized": self.n_sanitized,
        }
        return json.dumps(obj, indent=1, sort_keys=True)

    def to_csv(self) -> str:
        header = ["metrics_version", "accu_bi", "accu_mc", "f1_bi", "mse", "iou_mean",
                  "semantic_consistency", "temporal_consistency",
                  "n_frames", "n_sequences", "n_sanitized"]
        header += ["f1_bi_%s" % A.BINARY_NAMES[i] for i in range(A.N_BINARY)]
        header += ["iou_%s" % name for name in ("road", "sidewalk", "lane", "crosswalk")]
        row = [self.metrics_version, self.accu_bi, self.accu_mc, self.f1_bi, self.mse,
               self.iou_mean, self.semantic_consistency, self.temporal_consistency,
               self.n_frames, self.n_sequences, self.n_sanitized]
        row += list(self.f1_bi_per_attr) + list(self.iou_per_class)
        return (
            ",".join(header) + "\n" + ",".join(repr(v) if isinstance(v, float) else str(v) for v in row) + "\n"
        )

    @classmethod
    def from_json(cls, text: str) -> "MetricsReport":
        obj = json.loads(text)
        if obj.get("metrics_version") != METRICS_VERSION:
            raise ValueError("unsupported metrics_version %r" % obj.get("metrics_version"))
        return cls(
            accu_bi=obj["accu_bi"],
            accu_mc=obj["accu_mc"],
            f1_bi=obj["f1_bi"],
            f1_bi_per_attr=obj["f1_bi_per_attr"],
            mse=obj["mse"],
            iou_mean=obj["iou_mean"],
            iou_per_class=obj["iou_per_class"],
            semantic_consistency=obj["semantic_consistency"],
            temporal_consistency=obj["temporal_consistency"],
            n_frames=obj["n_frames"],
            n_sequences=obj["n_sequences"],
            n_sanitized=obj["n_sanitized"],
        )


def compute_report(pred_sequences, gt_sequences, grid: GridSpec = None) -> MetricsReport:
    """Full report over aligned prediction/ground-truth sequences."""
    if len(pred_sequences) == 0 or len(pred_sequences) != len(gt_sequences):
        raise ValueError("need matching non-empty sequence lists")
    preds = [p for seq in pred_sequences for p in seq]
    gts = [g for seq in gt_sequences for g in seq]
    f1_mean, f1_per = f1_binary(preds, gts)
    iou_mean, iou_per, n_sanitized = iou(preds, gts, grid)
    return MetricsReport(
        accu_bi=accu_binary(preds, gts),
        accu_mc=accu_multiclass(preds, gts),
        f1_bi=f1_mean,
        f1_bi_per_attr=[float(v) for v in f1_per],
        mse=mse_continuous(preds, gts),
        iou_mean=iou_mean,
        iou_per_class=[float(v) for v in iou_per],
        semantic_consistency=semantic_consistency(preds),
        temporal_consistency=temporal_consistency(pred_sequences),
        n_frames=len(preds),
        n_sequences=len(pred_sequences),
        n_sanitized=n_sanitized,
    )
