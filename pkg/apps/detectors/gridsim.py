"""
Prediction-grid simulator.

A single-shot detector downsamples its input by ``D`` and lets each grid
cell emit at most ``N_boxes`` boxes. Objects whose centroids crowd into one
cell beyond that capacity are lost, which is what limits dense scenes at
coarse downsampling.
"""
import logging
import math
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Optional

from django.conf import settings

from apps.core.exceptions import InvalidInputError

from .base import GroundTruthDetector, local_detection, truths_in_tile

logger = logging.getLogger(__name__)


def _positive_int(label, value):
    if int(value) != value or value < 1:
        raise InvalidInputError(f"{label} must be a positive integer, got {value!r}")


@dataclass(frozen=True)
class GridSimConfig:
    downsample: int = 16
    boxes_per_cell: int = 5

    def __post_init__(self):
        _positive_int('downsample', self.downsample)
        _positive_int('boxes_per_cell', self.boxes_per_cell)

    @classmethod
    def from_settings(cls, downsample=None, boxes_per_cell=None):
        return cls(
            downsample=downsample if downsample is not None else settings.PIPELINE['DOWNSAMPLE'],
            boxes_per_cell=boxes_per_cell if boxes_per_cell is not None else settings.PIPELINE['BOXES_PER_CELL'],
        )


def nf_layer_size(n_boxes, n_classes):
    """Filters in the final convolution: N_boxes x (N_classes + 5)"""
    if n_boxes < 1 or n_classes < 0:
        raise InvalidInputError(f"Need n_boxes >= 1 and n_classes >= 0, got {n_boxes}, {n_classes}")
    return n_boxes * (n_classes + 5)


def grid_dims(window, downsample):
    if window < 1 or downsample < 1:
        raise InvalidInputError(f"Need window >= 1 and downsample >= 1, got {window}, {downsample}")
    side = math.ceil(window / downsample)
    return side, side


def _cell_of(box, downsample, grid_w, grid_h):
    cx, cy = box.center
    col = min(int(cx // downsample), grid_w - 1)
    row = min(int(cy // downsample), grid_h - 1)
    return max(row, 0), max(col, 0)


def _capacity_key(truth):
    # largest first, then the lowest centroid (row before column)
    cx, cy = truth.box.center
    return (-truth.box.area, cy, cx, truth.box.as_tuple(), truth.class_id)


def gridsim_detect(tile, gt, cfg, truncation=None, visible=None):
    """Ground truth filtered by per-cell capacity; survivors keep their boxes at confidence 1.0"""
    if visible is None:
        visible = truths_in_tile(tile, gt, truncation)
    grid_w = math.ceil(tile.detector_width / cfg.downsample)
    grid_h = math.ceil(tile.detector_height / cfg.downsample)
    cells = defaultdict(list)
    for truth in visible:
        cells[_cell_of(truth.box, cfg.downsample, grid_w, grid_h)].append(truth)

    kept = []
    suppressed = 0
    for cell in sorted(cells):
        members = sorted(cells[cell], key=_capacity_key)
        kept.extend(members[:cfg.boxes_per_cell])
        suppressed += max(0, len(members) - cfg.boxes_per_cell)
    if suppressed:
        logger.debug(f"gridsim: {suppressed} objects over cell capacity on {tile.tile_id}")
    return [local_detection(tile, t.class_id, t.box, 1.0) for t in kept]


@dataclass(frozen=True)
class GridSimDetector(GroundTruthDetector):
    truths: tuple = ()
    config: GridSimConfig = field(default_factory=GridSimConfig)
    truncation: Optional[float] = None

    identifier = 'gridsim'

    def detect(self, tile, class_table):
        return gridsim_detect(tile, self.truths, self.config, visible=self.visible_truths(tile))
