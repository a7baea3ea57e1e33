"""
Exact box arithmetic.

The scalar ``iou`` and the vectorised ``iou_against`` evaluate the same float
operations in the same order, so suppression and matching agree bit for bit
with any reference built on ``iou``.
"""
import logging

import numpy as np

from .types import BoundingBox

logger = logging.getLogger(__name__)


def intersection_area(a, b):
    iw = max(0.0, min(a.xmax, b.xmax) - max(a.xmin, b.xmin))
    ih = max(0.0, min(a.ymax, b.ymax) - max(a.ymin, b.ymin))
    return iw * ih


def iou(a, b):
    """Intersection over union; 0 when both boxes are degenerate"""
    inter = intersection_area(a, b)
    union = a.area + b.area - inter
    if union <= 0.0:
        return 0.0
    return min(1.0, inter / union)


def boxes_to_array(boxes):
    """Stack boxes into an (n, 4) float64 array"""
    if not boxes:
        return np.zeros((0, 4), dtype=np.float64)
    return np.array([box.as_tuple() for box in boxes], dtype=np.float64)


def iou_against(box, others):
    """IoU of one box against every row of an (n, 4) array"""
    if len(others) == 0:
        return np.zeros(0, dtype=np.float64)
    iw = np.maximum(0.0, np.minimum(box.xmax, others[:, 2]) - np.maximum(box.xmin, others[:, 0]))
    ih = np.maximum(0.0, np.minimum(box.ymax, others[:, 3]) - np.maximum(box.ymin, others[:, 1]))
    inter = iw * ih
    areas = (others[:, 2] - others[:, 0]) * (others[:, 3] - others[:, 1])
    union = box.area + areas - inter
    result = np.zeros(len(others), dtype=np.float64)
    np.divide(inter, union, out=result, where=union > 0.0)
    return np.minimum(result, 1.0)


def clamp_box(box, width, height):
    """Clip each coordinate into [0, width] x [0, height]"""
    xmin = min(max(box.xmin, 0.0), width)
    xmax = min(max(box.xmax, 0.0), width)
    ymin = min(max(box.ymin, 0.0), height)
    ymax = min(max(box.ymax, 0.0), height)
    return BoundingBox(float(xmin), float(ymin), float(xmax), float(ymax))


def translate_box(box, dx, dy):
    return BoundingBox(box.xmin + dx, box.ymin + dy, box.xmax + dx, box.ymax + dy)


def scale_box(box, sx, sy):
    return BoundingBox(box.xmin * sx, box.ymin * sy, box.xmax * sx, box.ymax * sy)


def intersect_box(a, b):
    """Overlap rectangle of two boxes, or None when they do not overlap"""
    xmin, ymin = max(a.xmin, b.xmin), max(a.ymin, b.ymin)
    xmax, ymax = min(a.xmax, b.xmax), min(a.ymax, b.ymax)
    if xmin >= xmax or ymin >= ymax:
        return None
    return BoundingBox(xmin, ymin, xmax, ymax)


def box_area_m2(box, gsd):
    """Ground area covered by a box at the given meters-per-pixel"""
    return box.area * gsd * gsd


def clamp_confidence(value, source=''):
    """Clip a confidence into [0, 1], warning when the value changes"""
    clamped = min(1.0, max(0.0, float(value)))
    if clamped != value:
        where = f" from {source}" if source else ''
        logger.warning(f"Confidence {value}{where} clamped to {clamped}")
    return clamped
