"""
Detection scoring: greedy IoU matching, a confidence-threshold PR sweep,
envelope AP, mAP, F1 and km2/s throughput.

TP/FP/FN counts are summed over images before precision and recall are
taken; matching never crosses images.
"""
import logging
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from django.conf import settings

from apps.core.exceptions import (
    EmptyCurveError,
    InvalidInputError,
    MixedClassError,
    NoClassesError,
    NonPositiveTimeError,
)
from apps.core.geometry import boxes_to_array, iou_against
from apps.stitching.services import global_nms

logger = logging.getLogger(__name__)

SECONDS_PER_DAY = 86400


@dataclass(frozen=True)
class EvalConfig:
    iou_default: float
    iou_small_object: float
    thresholds: tuple
    nms_iou: float
    small_object_ids: frozenset = frozenset()

    def __post_init__(self):
        for label, value in (('iou_default', self.iou_default), ('iou_small_object', self.iou_small_object),
                             ('nms_iou', self.nms_iou)):
            if not 0.0 < value <= 1.0:
                raise InvalidInputError(f"{label} must lie in (0, 1], got {value}")
        if not self.thresholds:
            raise InvalidInputError("At least one confidence threshold is required")
        if any(b <= a for a, b in zip(self.thresholds, self.thresholds[1:])):
            raise InvalidInputError("Confidence thresholds must be strictly increasing")
        object.__setattr__(self, 'thresholds', tuple(float(t) for t in self.thresholds))
        object.__setattr__(self, 'small_object_ids', frozenset(self.small_object_ids))

    @classmethod
    def from_settings(cls, class_table=None, nms_iou=None, **overrides):
        pipeline = settings.PIPELINE
        count = overrides.pop('threshold_count', pipeline['THRESHOLD_COUNT'])
        low = overrides.pop('threshold_min', pipeline['THRESHOLD_MIN'])
        high = overrides.pop('threshold_max', pipeline['THRESHOLD_MAX'])
        return cls(
            iou_default=overrides.pop('iou_default', pipeline['IOU_DEFAULT']),
            iou_small_object=overrides.pop('iou_small_object', pipeline['IOU_SMALL_OBJECT']),
            thresholds=tuple(np.linspace(low, high, count).tolist()),
            nms_iou=nms_iou if nms_iou is not None else pipeline['NMS_IOU'],
            small_object_ids=class_table.small_object_ids if class_table is not None else frozenset(),
        )

    def iou_for(self, class_id):
        return self.iou_small_object if class_id in self.small_object_ids else self.iou_default


@dataclass(frozen=True)
class PRPoint:
    threshold: float
    tp: int
    fp: int
    fn: int
    precision: float
    recall: float

    @classmethod
    def from_counts(cls, threshold, tp, fp, fn):
        precision = tp / (tp + fp) if tp + fp else 1.0
        recall = tp / (tp + fn) if tp + fn else 1.0
        return cls(threshold, tp, fp, fn, precision, recall)


@dataclass(frozen=True)
class MatchResult:
    tp: int
    fp: int
    fn: int
    pairs: tuple


@dataclass(frozen=True)
class Throughput:
    area_km2: float
    detector_seconds: float
    wall_seconds: float
    rate_km2_per_s: float
    overhead_factor: float


@dataclass(frozen=True)
class EvalReport:
    class_table: object = field(repr=False)
    curves: dict
    average_precisions: dict
    map: float
    best_f1: dict
    throughput: Optional[Throughput] = None

    @property
    def rate_km2_per_s(self):
        return self.throughput.rate_km2_per_s if self.throughput else None

    @property
    def overhead_factor(self):
        return self.throughput.overhead_factor if self.throughput else None


def _single_class(dets, gts):
    classes = {d.class_id for d in dets} | {g.class_id for g in gts}
    if len(classes) > 1:
        raise MixedClassError(f"Matching needs a single class, got {sorted(classes)}")


def match_detections(dets, gts, iou_thresh):
    """
    Greedy matching by descending confidence; each detection takes the
    unmatched truth it overlaps most, provided IoU >= ``iou_thresh``.
    """
    _single_class(dets, gts)
    ordered_dets = sorted(dets, key=lambda d: (-d.confidence, d.box.as_tuple()))
    ordered_gts = sorted(gts, key=lambda g: g.box.as_tuple())
    gt_boxes = boxes_to_array([g.box for g in ordered_gts])
    available = np.ones(len(ordered_gts), dtype=bool)
    pairs = []
    for d in ordered_dets:
        if not available.any():
            break
        overlaps = np.where(available, iou_against(d.box, gt_boxes), -1.0)
        best = int(np.argmax(overlaps))
        if overlaps[best] >= iou_thresh:
            available[best] = False
            pairs.append((d, ordered_gts[best]))
    tp = len(pairs)
    return MatchResult(tp=tp, fp=len(dets) - tp, fn=len(gts) - tp, pairs=tuple(pairs))


def pr_curve_many(scenes, class_id, cfg):
    """PR points over several (detections, truths) scenes with counts summed across them"""
    per_scene = [
        ([d for d in dets if d.class_id == class_id], [g for g in gts if g.class_id == class_id])
        for dets, gts in scenes
    ]
    iou_thresh = cfg.iou_for(class_id)
    curve = []
    for threshold in cfg.thresholds:
        tp = fp = fn = 0
        for dets, gts in per_scene:
            kept = global_nms([d for d in dets if d.confidence >= threshold], cfg.nms_iou)
            result = match_detections(kept, gts, iou_thresh)
            tp, fp, fn = tp + result.tp, fp + result.fp, fn + result.fn
        curve.append(PRPoint.from_counts(threshold, tp, fp, fn))
    return curve


def pr_curve(dets, gts, class_id, cfg):
    return pr_curve_many([(dets, gts)], class_id, cfg)


def average_precision(curve):
    """Area under the monotone precision envelope, anchored at recall 0"""
    if not curve:
        raise EmptyCurveError("Cannot integrate an empty PR curve")
    points = sorted(curve, key=lambda p: (p.recall, p.precision))
    recalls = np.array([p.recall for p in points])
    precisions = np.array([p.precision for p in points])
    envelope = np.maximum.accumulate(precisions[::-1])[::-1]
    steps = np.diff(np.concatenate(([0.0], recalls)))
    return float(min(1.0, max(0.0, np.sum(steps * envelope))))


def mean_ap(per_class):
    if not per_class:
        raise NoClassesError("mAP needs at least one class")
    return sum(per_class.values()) / len(per_class)


def f1_score(tp, fp, fn):
    precision = tp / (tp + fp) if tp + fp else 1.0
    recall = tp / (tp + fn) if tp + fn else 1.0
    if precision + recall == 0:
        return 0.0
    return 2 * precision * recall / (precision + recall)


def best_f1(curve):
    """(threshold, F1) at the best point; ties go to the lowest threshold"""
    if not curve:
        raise EmptyCurveError("Cannot pick a best F1 from an empty PR curve")
    scored = [(f1_score(p.tp, p.fp, p.fn), p.threshold) for p in curve]
    best = max(scored, key=lambda item: (item[0], -item[1]))
    return best[1], best[0]


def throughput(area_km2, detector_seconds, wall_seconds):
    if detector_seconds <= 0 or wall_seconds <= 0:
        raise NonPositiveTimeError(f"Times must be positive, got detector {detector_seconds} s, wall {wall_seconds} s")
    return Throughput(
        area_km2=area_km2,
        detector_seconds=detector_seconds,
        wall_seconds=wall_seconds,
        rate_km2_per_s=area_km2 / detector_seconds,
        overhead_factor=wall_seconds / detector_seconds,
    )


def gpus_for_daily_area(daily_km2, rate_km2_per_s):
    """Detector instances needed to keep pace with a daily collection volume"""
    if rate_km2_per_s <= 0:
        raise InvalidInputError(f"Rate must be positive, got {rate_km2_per_s}")
    if daily_km2 < 0:
        raise InvalidInputError(f"Daily area must be >= 0, got {daily_km2}")
    return math.ceil(daily_km2 / (rate_km2_per_s * SECONDS_PER_DAY))


def scene_area_km2(width, height, gsd):
    return width * gsd * height * gsd / 1e6


def evaluate(scenes, class_table, cfg, timing=None):
    """EvalReport over every class present in the ground truth of ``scenes``"""
    scenes = [(list(dets), list(gts)) for dets, gts in scenes]
    present = sorted({g.class_id for _, gts in scenes for g in gts})
    if not present:
        raise NoClassesError("Ground truth contains no objects to evaluate")
    curves, aps, f1s = {}, {}, {}
    for class_id in present:
        curve = pr_curve_many(scenes, class_id, cfg)
        curves[class_id] = curve
        aps[class_id] = average_precision(curve)
        f1s[class_id] = best_f1(curve)
        logger.info(f"{class_table.name_of(class_id)}: AP {aps[class_id]:.4f}, best F1 {f1s[class_id][1]:.4f}")
    report = EvalReport(
        class_table=class_table,
        curves=curves,
        average_precisions=aps,
        map=mean_ap(aps),
        best_f1=f1s,
        throughput=timing,
    )
    logger.info(f"mAP {report.map:.4f} over {len(present)} classes")
    return report
