"""
Tile-to-parent stitching: offset remapping and class-wise global NMS.
"""
import csv
import io
import logging
from collections import defaultdict
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from django.conf import settings

from apps.core.exceptions import (
    DetectionParseError,
    FrameMismatchError,
    InvalidInputError,
    MixedParentError,
    UnwritableOutputError,
)
from apps.core.geometry import boxes_to_array, clamp_box, iou_against, scale_box, translate_box
from apps.core.types import BoundingBox, Detection, Frame

logger = logging.getLogger(__name__)

GLOBAL_COLUMNS = ('parent_name', 'class_name', 'xmin', 'ymin', 'xmax', 'ymax', 'confidence')


@dataclass(frozen=True)
class GlobalDetectionSet:
    """Final detections of one parent image; ``tile_id`` on each detection is its provenance"""

    parent_name: str
    width: int
    height: int
    detections: tuple

    def __len__(self):
        return len(self.detections)

    def __iter__(self):
        return iter(self.detections)


def globalize(dets, tile):
    """Shift tile-local detections by the tile offset into the parent frame"""
    inverse = 1.0 / tile.scale
    result = []
    for d in dets:
        if d.frame is not Frame.TILE_LOCAL:
            raise FrameMismatchError(f"Detection {d} is already in the global frame")
        if d.tile_id != tile.tile_id:
            raise FrameMismatchError(f"Detection from {d.tile_id} cannot be globalized through {tile.tile_id}")
        box = d.box if tile.scale == 1.0 else scale_box(d.box, inverse, inverse)
        box = clamp_box(translate_box(box, tile.col, tile.row), tile.parent_width, tile.parent_height)
        result.append(Detection(
            class_id=d.class_id,
            box=box,
            confidence=d.confidence,
            frame=Frame.GLOBAL,
            tile_id=d.tile_id,
            profile=d.profile,
        ))
    return result


def _suppression_order(d):
    # equal confidences keep the larger box, so edge-clipped copies lose to whole ones
    return (-d.confidence, -d.box.area, d.box.as_tuple(), d.tile_id or '', d.profile or '')


def _nms_one_class(dets, nms_iou):
    ordered = sorted(dets, key=_suppression_order)
    boxes = boxes_to_array([d.box for d in ordered])
    suppressed = np.zeros(len(ordered), dtype=bool)
    kept = []
    for i, d in enumerate(ordered):
        if suppressed[i]:
            continue
        kept.append(d)
        suppressed[i + 1:] |= iou_against(d.box, boxes[i + 1:]) > nms_iou
    return kept


def global_nms(dets, nms_iou=None):
    """
    Greedy per-class suppression of boxes overlapping a more confident one
    by strictly more than ``nms_iou``.
    """
    if nms_iou is None:
        nms_iou = settings.PIPELINE['NMS_IOU']
    if not 0.0 < nms_iou <= 1.0:
        raise InvalidInputError(f"NMS IoU must lie in (0, 1], got {nms_iou}")
    by_class = defaultdict(list)
    for d in dets:
        if d.frame is not Frame.GLOBAL:
            raise FrameMismatchError(f"Detection {d} is tile-local; globalize it first")
        by_class[d.class_id].append(d)
    kept = []
    for class_id in sorted(by_class):
        kept.extend(_nms_one_class(by_class[class_id], nms_iou))
    return sorted(kept, key=Detection.sort_key)


def stitch(per_tile, nms_iou=None):
    """Globalize every tile's detections and merge them with global NMS"""
    per_tile = list(per_tile)
    if not per_tile:
        raise InvalidInputError("Nothing to stitch: no tiles given")
    parents = {tile.parent_name for tile, _ in per_tile}
    if len(parents) > 1:
        raise MixedParentError(f"Tiles from several parents cannot be stitched together: {sorted(parents)}")
    first = per_tile[0][0]
    gathered = []
    for tile, dets in per_tile:
        gathered.extend(globalize(dets, tile))
    merged = global_nms(gathered, nms_iou)
    logger.info(f"Stitched {len(per_tile)} tiles of {first.parent_name}: {len(gathered)} -> {len(merged)} detections")
    return GlobalDetectionSet(
        parent_name=first.parent_name,
        width=first.parent_width,
        height=first.parent_height,
        detections=tuple(merged),
    )


def format_detections(detection_set, class_table):
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator='\n')
    writer.writerow(GLOBAL_COLUMNS)
    for d in detection_set.detections:
        writer.writerow([
            detection_set.parent_name, class_table.name_of(d.class_id),
            repr(d.box.xmin), repr(d.box.ymin), repr(d.box.xmax), repr(d.box.ymax),
            repr(d.confidence),
        ])
    return buffer.getvalue()


def write_detections(detection_set, class_table, path):
    """Global detection file; floats are written with ``repr`` so reruns are byte-identical"""
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(format_detections(detection_set, class_table), encoding='utf-8')
    except OSError as e:
        raise UnwritableOutputError(f"Cannot write detections {path}: {e}") from e
    logger.info(f"Wrote {len(detection_set)} detections to {path}")
    return path


def read_detections(path, class_table):
    """Global detection file back into {parent_name: [Detection]}"""
    path = Path(path)
    try:
        text = path.read_text(encoding='utf-8')
    except OSError as e:
        raise DetectionParseError(f"Cannot read detections {path}: {e}") from e
    by_parent = defaultdict(list)
    for line_number, cells in enumerate(csv.reader(io.StringIO(text)), start=1):
        if not cells:
            continue
        if line_number == 1 and cells[0] == GLOBAL_COLUMNS[0]:
            continue
        if len(cells) != len(GLOBAL_COLUMNS):
            raise DetectionParseError(f"{path}:{line_number}: expected {len(GLOBAL_COLUMNS)} fields, found {len(cells)}")
        try:
            class_id = class_table.id_of(cells[1])
        except KeyError:
            raise DetectionParseError(f"{path}:{line_number}: unknown class {cells[1]!r}") from None
        try:
            xmin, ymin, xmax, ymax, confidence = (float(c) for c in cells[2:])
            detection = Detection(class_id, BoundingBox(xmin, ymin, xmax, ymax), confidence)
        except ValueError as e:
            raise DetectionParseError(f"{path}:{line_number}: {e}") from e
        by_parent[cells[0]].append(detection)
    return dict(by_parent)
