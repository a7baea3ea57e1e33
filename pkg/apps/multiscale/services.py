"""
Multiscale detector ensemble.

Each ScaleProfile sees the image at its own resolution (window_m spread over
window_px pixels) and answers only for its own classes. Profile results are
mapped back to native pixels and merged with one final class-wise NMS.
"""
import dataclasses
import logging
import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from PIL import Image

from apps.core.exceptions import (
    InvalidConfigError,
    InvalidInputError,
    OddWindowError,
    PipelineError,
    UpsampleRequiredError,
)
from apps.core.geometry import clamp_box, scale_box
from apps.detectors.gridsim import grid_dims
from apps.stitching.services import GlobalDetectionSet, global_nms, stitch
from apps.tiling.services import TileSpec, extract_tiles, plan_tiles

logger = logging.getLogger(__name__)

GSD_TOLERANCE = 1e-9


@dataclass(frozen=True)
class ScaleProfile:
    """
    One ensemble member.

    ``classes`` holds class ids. ``simulate_2x`` cuts tiles of half the
    window from the image and upsamples them before detection.
    ``downsample`` is the detector's output stride; when set, the profile
    reports its prediction grid.
    """

    name: str
    window_m: float
    window_px: int
    classes: frozenset
    detector: object = field(compare=False, repr=False)
    downsample: Optional[int] = None
    simulate_2x: bool = False

    def __post_init__(self):
        if not self.window_m > 0:
            raise InvalidConfigError(f"Profile {self.name}: window_m must be positive, got {self.window_m}")
        if int(self.window_px) != self.window_px or self.window_px < 1:
            raise InvalidConfigError(f"Profile {self.name}: window_px must be a positive integer, got {self.window_px}")
        if self.downsample is not None and (int(self.downsample) != self.downsample or self.downsample < 1):
            raise InvalidConfigError(f"Profile {self.name}: downsample must be a positive integer, got {self.downsample}")
        object.__setattr__(self, 'classes', frozenset(self.classes))

    @property
    def grid(self):
        """Prediction grid (gw, gh) of one detector window, or None without a downsample"""
        if self.downsample is None:
            return None
        return grid_dims(self.window_px, self.downsample)


@dataclass(frozen=True)
class EnsembleConfig:
    profiles: tuple
    nms_iou: Optional[float] = None
    size_filter: bool = False

    def __post_init__(self):
        if not self.profiles:
            raise InvalidConfigError("An ensemble needs at least one profile")
        names = [p.name for p in self.profiles]
        if len(set(names)) != len(names):
            raise InvalidConfigError(f"Profile names must be unique: {names}")
        seen = set()
        for profile in self.profiles:
            shared = seen & profile.classes
            if shared:
                raise InvalidConfigError(f"Profile {profile.name} repeats classes {sorted(shared)} routed elsewhere")
            seen |= profile.classes

    @property
    def routed_classes(self):
        return frozenset().union(*(p.classes for p in self.profiles))

    def check_coverage(self, class_table):
        missing = [entry.name for entry in class_table if entry.class_id not in self.routed_classes]
        if missing:
            raise InvalidConfigError(f"No profile handles classes {missing}")
        unknown = sorted(c for c in self.routed_classes if c not in class_table)
        if unknown:
            raise InvalidConfigError(f"Profiles route unknown class ids {unknown}")


@dataclass(frozen=True)
class TilingPlan:
    """Native tile spec plus the integer upsampling applied before detection"""

    spec: TileSpec
    scale: int = 1

    def tiles(self, image):
        records = extract_tiles(image, self.spec)
        if self.scale == 1:
            return records
        return [dataclasses.replace(r, scale=self.scale) for r in records]

    def tile_count(self, image):
        return len(plan_tiles(image.width, image.height, self.spec))


def effective_gsd(profile):
    return profile.window_m / profile.window_px


def _target_gsd(profile):
    gsd = effective_gsd(profile)
    return gsd * 2.0 if profile.simulate_2x else gsd


def resample_for_profile(image, profile):
    """Area-average the image down to the resolution the profile cuts tiles at"""
    target = _target_gsd(profile)
    factor = image.gsd / target
    if abs(factor - 1.0) <= GSD_TOLERANCE:
        return image
    if factor > 1.0:
        raise UpsampleRequiredError(
            f"Image {image.name} at {image.gsd} m/px is coarser than profile {profile.name} ({target} m/px)"
        )
    width = max(1, round(image.width * factor))
    height = max(1, round(image.height * factor))
    resized = Image.fromarray(np.ascontiguousarray(image.pixels)).resize((width, height), resample=Image.BOX)
    logger.info(
        f"Resampled {image.name} {image.width}x{image.height} -> {width}x{height} for profile {profile.name}"
    )
    return image.replace(name=f"{image.name}@{profile.name}", pixels=np.asarray(resized, dtype=np.uint8), gsd=target)


def simulate_2x(image, window_px, overlap_frac=None):
    """Plan tiles of window_px / 2 native pixels, each upsampled 2x to window_px"""
    if window_px % 2:
        raise OddWindowError(f"2x simulation needs an even window, got {window_px}")
    plan = TilingPlan(spec=TileSpec.from_settings(window=window_px // 2, overlap_frac=overlap_frac), scale=2)
    logger.info(f"2x simulation on {image.name}: {plan.tile_count(image)} tiles of {window_px // 2} px")
    return plan


def filter_implausible_sizes(dets, class_table, gsd):
    """Drop detections whose longer side in meters falls outside the class size bounds"""
    kept = []
    for d in dets:
        entry = class_table.entry(d.class_id)
        extent_m = max(d.box.width, d.box.height) * gsd
        if entry.min_size_m is not None and extent_m < entry.min_size_m:
            continue
        if entry.max_size_m is not None and extent_m > entry.max_size_m:
            continue
        kept.append(d)
    if len(kept) != len(dets):
        logger.info(f"Size filter dropped {len(dets) - len(kept)} of {len(dets)} detections")
    return kept


def chip_count_ratio(image_extent_m, fine_window_m, coarse_window_m, spec):
    """Coarse-profile tile count over fine-profile tile count for a square region"""
    if image_extent_m <= 0 or fine_window_m <= 0 or coarse_window_m <= 0:
        raise InvalidInputError("Extents and windows must be positive")
    if coarse_window_m < fine_window_m:
        raise InvalidInputError(f"Coarse window {coarse_window_m} m is finer than {fine_window_m} m")

    def count(window_m):
        extent_px = max(1, round(image_extent_m * spec.window / window_m))
        return len(plan_tiles(extent_px, extent_px, spec))

    return count(coarse_window_m) / count(fine_window_m)


class EnsembleRunner:
    """
    Runs every profile over one image and merges the results.

    ``timings`` accumulates tiling, detection and stitching seconds plus
    the summed per-tile detector time across profiles.
    """

    def __init__(self, config, tile_spec, class_table, workers=1):
        config.check_coverage(class_table)
        self.config = config
        self.tile_spec = tile_spec
        self.class_table = class_table
        self.workers = workers
        self.timings = {
            'tiling': 0.0, 'detection': 0.0, 'stitching': 0.0, 'detector_seconds': 0.0, 'tiles': 0, 'grids': {},
        }

    def plan_for(self, image, profile):
        if profile.simulate_2x:
            return simulate_2x(image, profile.window_px, self.tile_spec.overlap_frac)
        return TilingPlan(spec=self.tile_spec.with_window(profile.window_px))

    def run_profile(self, image, profile):
        """Detections of one profile, in the native image's global frame"""
        started = time.perf_counter()
        resampled = resample_for_profile(image, profile)
        tiles = self.plan_for(resampled, profile).tiles(resampled)
        self.timings['tiling'] += time.perf_counter() - started
        self.timings['tiles'] += len(tiles)
        if profile.grid is not None:
            self.timings['grids'][profile.name] = list(profile.grid)
            logger.info(f"Profile {profile.name}: {profile.grid[0]}x{profile.grid[1]} prediction grid per window")

        scale_x = image.width / resampled.width
        scale_y = image.height / resampled.height
        detector = profile.detector
        if resampled is not image:
            detector = detector.at_resolution(scale_x, scale_y)

        started = time.perf_counter()
        batch = detector.detect_batch(tiles, self.class_table, self.workers)
        self.timings['detection'] += time.perf_counter() - started
        self.timings['detector_seconds'] += batch.detector_seconds

        started = time.perf_counter()
        routed = [
            [dataclasses.replace(d, profile=profile.name) for d in dets if d.class_id in profile.classes]
            for dets in batch.per_tile
        ]
        stitched = stitch(zip(tiles, routed), self.config.nms_iou)
        detections = list(stitched.detections)
        if resampled is not image:
            detections = [
                dataclasses.replace(d, box=clamp_box(scale_box(d.box, scale_x, scale_y), image.width, image.height))
                for d in detections
            ]
        self.timings['stitching'] += time.perf_counter() - started
        logger.info(f"Profile {profile.name}: {len(detections)} detections from {len(tiles)} tiles")
        return detections

    def run(self, image):
        gathered = []
        for profile in self.config.profiles:
            if not profile.classes:
                logger.info(f"Profile {profile.name} routes no classes; skipped")
                continue
            try:
                gathered.extend(self.run_profile(image, profile))
            except PipelineError as e:
                raise e.with_context(f"profile {profile.name}") from e
        started = time.perf_counter()
        if self.config.size_filter:
            gathered = filter_implausible_sizes(gathered, self.class_table, image.gsd)
        merged = global_nms(gathered, self.config.nms_iou)
        self.timings['stitching'] += time.perf_counter() - started
        return GlobalDetectionSet(
            parent_name=image.name,
            width=image.width,
            height=image.height,
            detections=tuple(merged),
        )


def run_ensemble(image, config, tile_spec, class_table, workers=1):
    return EnsembleRunner(config, tile_spec, class_table, workers).run(image)


def single_profile(detector, tile_spec, class_table, gsd, name='default', nms_iou=None, downsample=None):
    """The plain windowed pipeline expressed as a one-profile ensemble at the image's own resolution"""
    profile = ScaleProfile(
        name=name,
        window_m=tile_spec.window * gsd,
        window_px=tile_spec.window,
        classes=frozenset(entry.class_id for entry in class_table),
        detector=detector,
        downsample=downsample,
    )
    return EnsembleConfig(profiles=(profile,), nms_iou=nms_iou)

