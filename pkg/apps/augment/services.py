"""
Training-data preparation: chip cutting, rotation, HSV jitter, resolution
degradation and centroid-to-box label conversion.
"""
import logging
import math
import zlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from django.conf import settings
from scipy import ndimage
from skimage import color, measure

from apps.core.exceptions import (
    BandCountError,
    DetectionParseError,
    ImageTooSmallError,
    InvalidInputError,
    NonSquareChipError,
    UnwritableOutputError,
)
from apps.core.geometry import clamp_box
from apps.core.imaging import read_raster, write_raster
from apps.core.types import BoundingBox, GroundTruthLabel
from apps.detectors.base import truncate_to_window
from apps.tiling.services import TileSpec, extract_tiles

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class LabeledChip:
    image: object
    labels: tuple

    def __post_init__(self):
        for label in self.labels:
            box = label.box
            if box.xmin < 0 or box.ymin < 0 or box.xmax > self.image.width or box.ymax > self.image.height:
                raise InvalidInputError(f"Label {box.as_tuple()} lies outside chip {self.image.name}")
        object.__setattr__(self, 'labels', tuple(self.labels))


@dataclass(frozen=True)
class AugmentSpec:
    """Rotation angles in degrees and multiplicative (low, high) ranges for H, S and V"""

    rotation_angles: tuple = (0.0,)
    hsv_scale_ranges: tuple = ((1.0, 1.0), (1.0, 1.0), (1.0, 1.0))
    seed: int = 0

    def __post_init__(self):
        if not self.rotation_angles:
            raise InvalidInputError("At least one rotation angle is required")
        if len(self.hsv_scale_ranges) != 3:
            raise InvalidInputError(f"Need three HSV ranges, got {len(self.hsv_scale_ranges)}")
        for low, high in self.hsv_scale_ranges:
            if not 0 < low <= high:
                raise InvalidInputError(f"HSV range ({low}, {high}) must be positive and ordered")
        if self.seed < 0:
            raise InvalidInputError(f"seed must be >= 0, got {self.seed}")
        object.__setattr__(self, 'rotation_angles', tuple(float(a) for a in self.rotation_angles))
        object.__setattr__(self, 'hsv_scale_ranges', tuple(tuple(map(float, r)) for r in self.hsv_scale_ranges))


def _to_uint8(values):
    return np.clip(np.rint(values), 0, 255).astype(np.uint8)


def rotate_point(x, y, center, angle):
    """Counterclockwise on screen (y down) about ``center``"""
    theta = math.radians(angle)
    cos, sin = math.cos(theta), math.sin(theta)
    if angle % 90 == 0:
        cos, sin = round(cos), round(sin)
    dx, dy = x - center, y - center
    return center + dx * cos + dy * sin, center - dx * sin + dy * cos


def rotate_box(box, size, angle):
    """Axis-aligned hull of the rotated corners, clamped to the chip"""
    center = size / 2.0
    corners = [
        rotate_point(x, y, center, angle)
        for x in (box.xmin, box.xmax)
        for y in (box.ymin, box.ymax)
    ]
    xs = [x for x, _ in corners]
    ys = [y for _, y in corners]
    return clamp_box(BoundingBox(min(xs), min(ys), max(xs), max(ys)), size, size)


def rotate_chip(chip, angle, fill=None):
    """Rotate pixels bilinearly about the chip centre and replace labels by their rotated hulls"""
    image = chip.image
    if image.width != image.height:
        raise NonSquareChipError(f"Chip {image.name} is {image.width}x{image.height}, rotation needs a square")
    if angle % 360 == 0:
        return chip
    if fill is None:
        fill = settings.PIPELINE['ROTATION_FILL']
    rotated = ndimage.rotate(
        image.pixels.astype(np.float64), angle, axes=(1, 0), reshape=False, order=1, mode='constant', cval=fill,
    )
    labels = []
    for label in chip.labels:
        box = rotate_box(label.box, image.width, angle)
        if box.area > 0:
            labels.append(GroundTruthLabel(label.class_id, box))
    if len(labels) != len(chip.labels):
        logger.warning(f"Rotation by {angle} dropped {len(chip.labels) - len(labels)} labels of {image.name}")
    return LabeledChip(image=image.replace(pixels=_to_uint8(rotated)), labels=tuple(labels))


def hsv_jitter(image, spec, rng=None):
    """Scale H, S and V by factors drawn from the spec's ranges"""
    if image.bands != 3:
        raise BandCountError(f"HSV jitter needs 3 bands, {image.name} has {image.bands}")
    if rng is None:
        rng = np.random.default_rng(spec.seed)
    factors = np.array([rng.uniform(low, high) for low, high in spec.hsv_scale_ranges])
    hsv = color.rgb2hsv(image.pixels)
    hsv = np.clip(hsv * factors, 0.0, 1.0)
    rgb = color.hsv2rgb(hsv) * 255.0
    return image.replace(pixels=_to_uint8(rgb))


def degrade_resolution(image, sigma=None):
    """Gaussian blur then 2x2 block mean: half the pixels, twice the gsd"""
    if image.width < 2 or image.height < 2:
        raise ImageTooSmallError(f"Image {image.name} is {image.width}x{image.height}, need at least 2x2")
    if sigma is None:
        sigma = settings.PIPELINE['DEGRADE_SIGMA']
    pixels = image.pixels.astype(np.float64)
    sigmas = (sigma, sigma) if image.bands == 1 else (sigma, sigma, 0)
    blurred = ndimage.gaussian_filter(pixels, sigma=sigmas, mode='nearest')
    height, width = image.height // 2 * 2, image.width // 2 * 2
    block = (2, 2) if image.bands == 1 else (2, 2, 1)
    reduced = measure.block_reduce(blurred[:height, :width], block_size=block, func=np.mean)
    return image.replace(pixels=_to_uint8(reduced), gsd=image.gsd * 2.0)


def centroid_to_box(cx, cy, object_m, gsd):
    """Square box of side object_m / gsd pixels centred on (cx, cy)"""
    if gsd <= 0 or object_m <= 0:
        raise InvalidInputError(f"Need positive object size and gsd, got {object_m}, {gsd}")
    half = object_m / gsd / 2.0
    return BoundingBox(cx - half, cy - half, cx + half, cy + half)


def chip_window_px(chip_window_m, gsd):
    window = math.floor(chip_window_m / gsd + 0.5)
    if window < 1:
        raise InvalidInputError(f"A {chip_window_m} m chip at {gsd} m/px is smaller than one pixel")
    return window


def cut_training_chips(image, labels, chip_window_m, empty_fraction=0.0, overlap_frac=None, seed=0, truncation=None):
    """
    Cut labelled chips of ``chip_window_m`` meters.

    Chips without labels survive with probability ``empty_fraction``.
    """
    if not 0.0 <= empty_fraction <= 1.0:
        raise InvalidInputError(f"empty_fraction must lie in [0, 1], got {empty_fraction}")
    window = chip_window_px(chip_window_m, image.gsd)
    spec = TileSpec.from_settings(window=window, overlap_frac=overlap_frac)
    rng = np.random.default_rng(seed)
    chips = []
    for tile in extract_tiles(image, spec):
        chip_labels = truncate_to_window(labels, tile.rect, truncation)
        if not chip_labels and not (empty_fraction > 0 and rng.random() < empty_fraction):
            continue
        # chip names stay valid parent names
        chip_image = image.replace(name=f"{image.name}_{tile.row}_{tile.col}", pixels=tile.pixels)
        chips.append(LabeledChip(image=chip_image, labels=tuple(chip_labels)))
    logger.info(f"Cut {len(chips)} training chips of {window} px from {image.name}")
    return chips


def _angle_entropy(angle):
    return zlib.crc32(repr(float(angle)).encode('utf-8'))


def augment_chip(chip, spec, index=0):
    """One chip per rotation angle, each with its own HSV draw"""
    results = []
    for angle in spec.rotation_angles:
        rotated = rotate_chip(chip, angle)
        if rotated.image.bands == 3:
            rng = np.random.default_rng(np.random.SeedSequence([spec.seed, index, _angle_entropy(angle)]))
            rotated = LabeledChip(image=hsv_jitter(rotated.image, spec, rng), labels=rotated.labels)
        results.append(rotated)
    return results


def read_label_file(path, class_table):
    """``class_name,xmin,ymin,xmax,ymax`` per line, chip-local pixels"""
    path = Path(path)
    try:
        lines = path.read_text(encoding='utf-8').splitlines()
    except OSError as e:
        raise DetectionParseError(f"Cannot read labels {path}: {e}") from e
    labels = []
    for line_number, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        cells = [c.strip() for c in line.split(',')]
        if len(cells) != 5:
            raise DetectionParseError(f"{path}:{line_number}: expected 5 fields, found {len(cells)}")
        try:
            class_id = class_table.id_of(cells[0])
        except KeyError:
            raise DetectionParseError(f"{path}:{line_number}: unknown class {cells[0]!r}") from None
        try:
            labels.append(GroundTruthLabel(class_id, BoundingBox(*(float(c) for c in cells[1:]))))
        except ValueError as e:
            raise DetectionParseError(f"{path}:{line_number}: {e}") from e
    return labels


def write_label_file(labels, class_table, path):
    path = Path(path)
    lines = [
        ','.join([class_table.name_of(label.class_id), *(repr(float(v)) for v in label.box.as_tuple())])
        for label in labels
    ]
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(''.join(line + '\n' for line in lines), encoding='utf-8')
    except OSError as e:
        raise UnwritableOutputError(f"Cannot write labels {path}: {e}") from e
    return path


def read_training_list(path):
    """(image path, label path) pairs; relative paths resolve against the list's folder"""
    path = Path(path)
    try:
        lines = path.read_text(encoding='utf-8').splitlines()
    except OSError as e:
        raise InvalidInputError(f"Cannot read training list {path}: {e}") from e
    entries = []
    for line_number, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        cells = line.split()
        if len(cells) != 2:
            raise InvalidInputError(f"{path}:{line_number}: expected an image path and a label path")
        entries.append(tuple(path.parent / cell for cell in cells))
    return entries


def write_training_list(entries, path):
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(''.join(f"{image} {labels}\n" for image, labels in entries), encoding='utf-8')
    except OSError as e:
        raise UnwritableOutputError(f"Cannot write training list {path}: {e}") from e
    return path


def load_chip(image_path, label_path, class_table):
    return LabeledChip(image=read_raster(image_path), labels=tuple(read_label_file(label_path, class_table)))


def save_chip(chip, stem, out_dir, class_table):
    """Write ``stem.png`` (plus sidecar) and ``stem.txt``; returns both paths relative to ``out_dir``"""
    out_dir = Path(out_dir)
    image_name, label_name = f"{stem}.png", f"{stem}.txt"
    write_raster(chip.image, out_dir / image_name)
    write_label_file(chip.labels, class_table, out_dir / label_name)
    return image_name, label_name
