"""
Per-tile detection contract.

A detector turns one TileRecord into tile-local detections whose boxes lie
inside the tile as the detector sees it (``tile.scale`` times the native
cutout size).
"""
import abc
import dataclasses
import logging
import time
from dataclasses import dataclass
from functools import cached_property

import numpy as np
from django.conf import settings
from joblib import Parallel, delayed

from apps.core.exceptions import InvalidInputError
from apps.core.geometry import boxes_to_array, clamp_box, intersect_box, scale_box, translate_box
from apps.core.types import Detection, Frame, GroundTruthLabel

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class BatchResult:
    """Detections per tile, in tile order, plus the summed per-tile detect time"""

    per_tile: list
    detector_seconds: float


def _timed_detect(detector, tile, class_table):
    started = time.perf_counter()
    detections = detector.detect(tile, class_table)
    return detections, time.perf_counter() - started


class Detector(abc.ABC):
    """Base class for all tile detectors"""

    identifier = 'detector'

    @abc.abstractmethod
    def detect(self, tile, class_table):
        """Return tile-local detections for one tile"""

    def detect_batch(self, tiles, class_table, workers=1):
        """Run ``detect`` over every tile; results keep tile order whatever the pool does"""
        if workers <= 1 or len(tiles) <= 1:
            results = [_timed_detect(self, tile, class_table) for tile in tiles]
        else:
            results = Parallel(n_jobs=workers)(
                delayed(_timed_detect)(self, tile, class_table) for tile in tiles
            )
        per_tile = [detections for detections, _ in results]
        seconds = sum(elapsed for _, elapsed in results)
        logger.info(
            f"{self.identifier}: {sum(len(d) for d in per_tile)} detections on {len(tiles)} tiles "
            f"({seconds:.3f} s detector time, {workers} workers)"
        )
        return BatchResult(per_tile=per_tile, detector_seconds=seconds)

    def at_resolution(self, scale_x, scale_y):
        """Detector for an image resampled so that one of its pixels spans (scale_x, scale_y) native pixels"""
        return self


def truncate_to_window(labels, window, threshold=None):
    """
    Labels present in a window, clipped to it and shifted to its frame.

    A label is present when strictly more than ``threshold`` of its area
    falls inside the window. Zero-area labels are never present.
    """
    if threshold is None:
        threshold = settings.PIPELINE['TRUNCATION']
    present = []
    for label in labels:
        area = label.box.area
        if area <= 0.0:
            continue
        inside = intersect_box(label.box, window)
        if inside is None or inside.area / area <= threshold:
            continue
        present.append(GroundTruthLabel(label.class_id, translate_box(inside, -window.xmin, -window.ymin)))
    return present


def truths_in_tile(tile, truths, threshold=None):
    """Ground truth visible in a tile, in the detector's pixel frame"""
    present = truncate_to_window(truths, tile.rect, threshold)
    if tile.scale != 1.0:
        present = [GroundTruthLabel(t.class_id, scale_box(t.box, tile.scale, tile.scale)) for t in present]
    return present


def local_detection(tile, class_id, box, confidence):
    box = clamp_box(box, tile.detector_width, tile.detector_height)
    return Detection(
        class_id=class_id,
        box=box,
        confidence=confidence,
        frame=Frame.TILE_LOCAL,
        tile_id=tile.tile_id,
    )


def validate_tile_detections(detections, tile, class_table):
    """Enforce the contract on detector output"""
    for detection in detections:
        if detection.frame is not Frame.TILE_LOCAL or detection.tile_id != tile.tile_id:
            raise InvalidInputError(f"Detection {detection} does not belong to tile {tile.tile_id}")
        if detection.class_id not in class_table:
            raise InvalidInputError(f"Unknown class id {detection.class_id} from tile {tile.tile_id}")
        box = detection.box
        if box.xmin < 0 or box.ymin < 0 or box.xmax > tile.detector_width or box.ymax > tile.detector_height:
            raise InvalidInputError(f"Box {box.as_tuple()} outside tile {tile.tile_id}")
    return detections


class GroundTruthDetector(Detector):
    """Detector that reads the scene's ground truth instead of pixels"""

    truths = ()
    truncation = None

    @cached_property
    def truth_array(self):
        return boxes_to_array([t.box for t in self.truths])

    def visible_truths(self, tile):
        rect = tile.rect
        boxes = self.truth_array
        overlapping = (
            (boxes[:, 0] < rect.xmax) & (boxes[:, 2] > rect.xmin)
            & (boxes[:, 1] < rect.ymax) & (boxes[:, 3] > rect.ymin)
        )
        candidates = [self.truths[i] for i in np.flatnonzero(overlapping)]
        return truths_in_tile(tile, candidates, self.truncation)

    def at_resolution(self, scale_x, scale_y):
        scaled = tuple(
            GroundTruthLabel(t.class_id, scale_box(t.box, 1.0 / scale_x, 1.0 / scale_y))
            for t in self.truths
        )
        return dataclasses.replace(self, truths=scaled)
