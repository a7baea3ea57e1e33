"""
Ground-truth oracle with a configurable noise model.

Every tile draws from its own generator seeded by (seed, parent, row, col),
so results do not depend on which worker handles which tile.
"""
import logging
import zlib
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from apps.core.exceptions import InvalidInputError
from apps.core.types import BoundingBox

from .base import GroundTruthDetector, local_detection, truths_in_tile

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ConfidenceLaw:
    """Uniform confidence ranges for true and false positives"""

    tp_range: tuple = (0.7, 1.0)
    fp_range: tuple = (0.05, 0.7)

    def __post_init__(self):
        for label, (low, high) in (('tp_range', self.tp_range), ('fp_range', self.fp_range)):
            if not 0.0 <= low <= high <= 1.0:
                raise InvalidInputError(f"{label} must satisfy 0 <= low <= high <= 1, got {(low, high)}")


@dataclass(frozen=True)
class OracleNoiseModel:
    dropout_prob: float = 0.0
    fp_rate: float = 0.0
    jitter_px: float = 0.0
    confidence_law: ConfidenceLaw = field(default_factory=ConfidenceLaw)
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.dropout_prob <= 1.0:
            raise InvalidInputError(f"dropout_prob must lie in [0, 1], got {self.dropout_prob}")
        if self.fp_rate < 0.0:
            raise InvalidInputError(f"fp_rate must be >= 0, got {self.fp_rate}")
        if self.jitter_px < 0.0:
            raise InvalidInputError(f"jitter_px must be >= 0, got {self.jitter_px}")
        if self.seed < 0:
            raise InvalidInputError(f"seed must be >= 0, got {self.seed}")

    @property
    def noiseless(self):
        """No dropout, no false positives, no jitter: truths come back at confidence 1.0"""
        return self.dropout_prob == 0.0 and self.fp_rate == 0.0 and self.jitter_px == 0.0


def tile_rng(seed, tile):
    entropy = [seed, zlib.crc32(tile.parent_name.encode('utf-8')), tile.row, tile.col]
    return np.random.default_rng(np.random.SeedSequence(entropy))


def _jittered(box, rng, jitter):
    dx0, dy0, dx1, dy1 = rng.uniform(-jitter, jitter, size=4)
    x0, x1 = sorted((box.xmin + dx0, box.xmax + dx1))
    y0, y1 = sorted((box.ymin + dy0, box.ymax + dy1))
    return BoundingBox(float(x0), float(y0), float(x1), float(y1))


def _false_positives(tile, gt, noise, rng):
    count = int(rng.poisson(noise.fp_rate))
    if count == 0:
        return []
    width, height = tile.detector_width, tile.detector_height
    sizes = [(t.box.width * tile.scale, t.box.height * tile.scale) for t in gt if t.box.area > 0]
    if not sizes:
        side = max(1.0, min(width, height) / 20.0)
        sizes = [(side, side)]
    class_ids = sorted({t.class_id for t in gt}) or [0]
    low, high = noise.confidence_law.fp_range
    detections = []
    for _ in range(count):
        box_w, box_h = sizes[int(rng.integers(len(sizes)))]
        box_w, box_h = min(box_w, width), min(box_h, height)
        x = rng.uniform(0.0, width - box_w)
        y = rng.uniform(0.0, height - box_h)
        class_id = class_ids[int(rng.integers(len(class_ids)))]
        confidence = float(rng.uniform(low, high))
        box = BoundingBox(float(x), float(y), float(x + box_w), float(y + box_h))
        detections.append(local_detection(tile, class_id, box, confidence))
    return detections


def oracle_detect(tile, gt, noise, truncation=None, visible=None):
    """
    Ground truth seen through a tile, with dropout, jitter and false positives.

    ``visible`` short-circuits the truncation step when the caller already
    has the tile-local truths.
    """
    rng = tile_rng(noise.seed, tile)
    if visible is None:
        visible = truths_in_tile(tile, gt, truncation)
    low, high = noise.confidence_law.tp_range
    detections = []
    for truth in visible:
        if noise.dropout_prob > 0.0 and rng.random() < noise.dropout_prob:
            continue
        box = truth.box
        if noise.jitter_px > 0.0:
            box = _jittered(box, rng, noise.jitter_px)
        confidence = 1.0 if noise.noiseless else float(rng.uniform(low, high))
        detections.append(local_detection(tile, truth.class_id, box, confidence))
    if noise.fp_rate > 0.0:
        detections.extend(_false_positives(tile, gt, noise, rng))
    logger.debug(f"oracle: {len(detections)} detections from {len(visible)} visible truths on {tile.tile_id}")
    return detections


@dataclass(frozen=True)
class OracleDetector(GroundTruthDetector):
    truths: tuple = ()
    noise: OracleNoiseModel = field(default_factory=OracleNoiseModel)
    truncation: Optional[float] = None

    identifier = 'oracle'

    def detect(self, tile, class_table):
        return oracle_detect(tile, self.truths, self.noise, visible=self.visible_truths(tile))
