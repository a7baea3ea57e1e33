"""
Sliding-window partitioning of large images into overlapping cutouts.

Cutouts are named ``parent|row_col_height_width.ext`` so that every
detection can be traced back to its position in the parent image.
"""
import logging
import math
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from django.conf import settings
from PIL import Image, UnidentifiedImageError

from apps.core.exceptions import (
    InvalidInputError,
    MalformedNameError,
    UnreadableImageError,
    UnwritableOutputError,
)
from apps.core.imaging import pixels_from_pil
from apps.core.types import BoundingBox

logger = logging.getLogger(__name__)

NAME_DELIMITER = '|'
FIELD_DELIMITER = '_'
MANIFEST_COLUMNS = ('cutout_name', 'parent_name', 'row', 'col', 'h', 'w')

_CANONICAL_INT = re.compile(r'0|[1-9][0-9]*')
_EXTENSION = re.compile(r'[A-Za-z0-9]+')


@dataclass(frozen=True)
class TileSpec:
    """Square window side in pixels and the fraction shared by neighbours"""

    window: int
    overlap_frac: float

    def __post_init__(self):
        if int(self.window) != self.window or self.window < 1:
            raise InvalidInputError(f"Window must be a positive integer, got {self.window}")
        if not 0.0 <= self.overlap_frac < 1.0:
            raise InvalidInputError(f"Overlap must lie in [0, 1), got {self.overlap_frac}")

    @classmethod
    def from_settings(cls, window=None, overlap_frac=None):
        return cls(
            window=window if window is not None else settings.PIPELINE['WINDOW_PX'],
            overlap_frac=overlap_frac if overlap_frac is not None else settings.PIPELINE['OVERLAP'],
        )

    @property
    def stride(self):
        stride = math.floor(self.window * (1.0 - self.overlap_frac))
        if stride < 1:
            raise InvalidInputError(
                f"Overlap {self.overlap_frac} leaves no stride for a {self.window} px window"
            )
        return stride

    def with_window(self, window):
        return TileSpec(window=window, overlap_frac=self.overlap_frac)


@dataclass(frozen=True, eq=False)
class TileRecord:
    """
    One cutout of a parent image.

    ``scale`` is detector pixels per parent pixel: 1.0 for native cutouts,
    2.0 for cutouts upsampled before detection.
    """

    parent_name: str
    row: int
    col: int
    height: int
    width: int
    pixels: np.ndarray = field(repr=False)
    parent_width: int
    parent_height: int
    scale: float = 1.0

    def __post_init__(self):
        if self.row < 0 or self.col < 0 or self.height < 1 or self.width < 1:
            raise InvalidInputError(f"Invalid tile geometry {self.row},{self.col},{self.height},{self.width}")
        if self.row + self.height > self.parent_height or self.col + self.width > self.parent_width:
            raise InvalidInputError(
                f"Tile {self.name} exceeds parent extent {self.parent_width}x{self.parent_height}"
            )
        if int(self.scale) != self.scale or self.scale < 1:
            raise InvalidInputError(f"Tile scale must be a positive integer factor, got {self.scale}")

    @property
    def name(self):
        return cutout_name(self.parent_name, self.row, self.col, self.height, self.width, 'png')

    @property
    def tile_id(self):
        return self.name

    @property
    def rect(self):
        """Tile rectangle in the parent's pixel frame"""
        return BoundingBox(self.col, self.row, self.col + self.width, self.row + self.height)

    @property
    def detector_width(self):
        return self.width * self.scale

    @property
    def detector_height(self):
        return self.height * self.scale

    @property
    def detector_pixels(self):
        """Cutout as handed to the detector: nearest-neighbour upsampled by ``scale``"""
        factor = int(self.scale)
        if factor == 1:
            return self.pixels
        return np.repeat(np.repeat(self.pixels, factor, axis=0), factor, axis=1)


@dataclass(frozen=True)
class ManifestRow:
    cutout_name: str
    parent_name: str
    row: int
    col: int
    height: int
    width: int


def plan_axis(extent, window, stride):
    """Offsets along one axis; the last one abuts the far edge"""
    offsets = []
    position = 0
    while True:
        if position + window >= extent:
            offsets.append(max(0, extent - window))
            return offsets
        offsets.append(position)
        position += stride


def plan_tiles(image_w, image_h, spec):
    """Row-major list of (row, col) tile offsets covering the whole image"""
    if image_w < 1 or image_h < 1:
        raise InvalidInputError(f"Image extent must be positive, got {image_w}x{image_h}")
    stride = spec.stride
    rows = plan_axis(image_h, spec.window, stride)
    cols = plan_axis(image_w, spec.window, stride)
    return [(row, col) for row in rows for col in cols]


def validate_parent_name(parent):
    if not parent:
        raise MalformedNameError("Parent name is empty")
    if NAME_DELIMITER in parent:
        raise MalformedNameError(f"Parent name {parent!r} contains the delimiter {NAME_DELIMITER!r}")
    if any(ch in parent for ch in '\t\n\r/'):
        raise MalformedNameError(f"Parent name {parent!r} contains a tab, newline or path separator")


def cutout_name(parent, row, col, h, w, ext):
    """``parent|row_col_h_w.ext``"""
    validate_parent_name(parent)
    if not _EXTENSION.fullmatch(ext or ''):
        raise MalformedNameError(f"Extension {ext!r} must be alphanumeric")
    for label, value in (('row', row), ('col', col), ('height', h), ('width', w)):
        if int(value) != value or value < 0:
            raise MalformedNameError(f"{label} must be a non-negative integer, got {value!r}")
    fields = FIELD_DELIMITER.join(str(int(v)) for v in (row, col, h, w))
    return f"{parent}{NAME_DELIMITER}{fields}.{ext}"


def parse_cutout_name(name):
    """Inverse of ``cutout_name``: (parent, row, col, h, w, ext)"""
    parent, delimiter, rest = name.partition(NAME_DELIMITER)
    if not delimiter:
        raise MalformedNameError(f"Cutout name {name!r} is missing the {NAME_DELIMITER!r} delimiter")
    validate_parent_name(parent)
    stem, dot, ext = rest.rpartition('.')
    if not dot or not _EXTENSION.fullmatch(ext):
        raise MalformedNameError(f"Cutout name {name!r} has no valid extension")
    parts = stem.split(FIELD_DELIMITER)
    labels = ('row', 'col', 'height', 'width')
    if len(parts) != len(labels):
        raise MalformedNameError(
            f"Cutout name {name!r} needs {len(labels)} {FIELD_DELIMITER!r}-separated fields, found {len(parts)}"
        )
    values = []
    for label, part in zip(labels, parts):
        if not _CANONICAL_INT.fullmatch(part):
            raise MalformedNameError(f"Cutout name {name!r}: {label} field {part!r} is not a non-negative integer")
        values.append(int(part))
    return (parent, *values, ext)


def extract_tiles(image, spec):
    """Cut the image into TileRecords in row-major offset order"""
    validate_parent_name(image.name)
    offsets = plan_tiles(image.width, image.height, spec)
    tile_h = min(spec.window, image.height)
    tile_w = min(spec.window, image.width)
    records = [
        TileRecord(
            parent_name=image.name,
            row=row,
            col=col,
            height=tile_h,
            width=tile_w,
            pixels=image.pixels[row:row + tile_h, col:col + tile_w].copy(),
            parent_width=image.width,
            parent_height=image.height,
        )
        for row, col in offsets
    ]
    logger.info(f"Partitioned {image.name} ({image.width}x{image.height}) into {len(records)} tiles of {spec.window} px")
    return records


def write_manifest(records, path):
    path = Path(path)
    lines = [
        '\t'.join([r.name, r.parent_name, str(r.row), str(r.col), str(r.height), str(r.width)])
        for r in records
    ]
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(''.join(line + '\n' for line in lines), encoding='utf-8')
    except OSError as e:
        raise UnwritableOutputError(f"Cannot write manifest {path}: {e}") from e
    return path


def read_manifest(path):
    path = Path(path)
    try:
        text = path.read_text(encoding='utf-8')
    except OSError as e:
        raise InvalidInputError(f"Cannot read manifest {path}: {e}") from e
    rows = []
    for line_number, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        cells = line.split('\t')
        if len(cells) != len(MANIFEST_COLUMNS):
            raise InvalidInputError(
                f"{path}:{line_number}: expected {len(MANIFEST_COLUMNS)} tab-separated fields, found {len(cells)}"
            )
        parent, row, col, h, w, _ext = parse_cutout_name(cells[0])
        try:
            declared = (cells[1], int(cells[2]), int(cells[3]), int(cells[4]), int(cells[5]))
        except ValueError as e:
            raise InvalidInputError(f"{path}:{line_number}: {e}") from e
        if declared != (parent, row, col, h, w):
            raise InvalidInputError(f"{path}:{line_number}: fields disagree with cutout name {cells[0]!r}")
        rows.append(ManifestRow(cells[0], parent, row, col, h, w))
    return rows


def parent_extent(rows):
    """Parent (width, height) recovered from the union of its tiles"""
    if not rows:
        raise InvalidInputError("Manifest is empty")
    return max(r.col + r.width for r in rows), max(r.row + r.height for r in rows)


def write_cutouts(records, out_dir):
    out_dir = Path(out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        for record in records:
            Image.fromarray(np.ascontiguousarray(record.detector_pixels)).save(out_dir / record.name, format='PNG')
    except OSError as e:
        raise UnwritableOutputError(f"Cannot write cutouts to {out_dir}: {e}") from e
    return out_dir


def load_tiles(manifest_path):
    """Rebuild TileRecords from a manifest and the cutouts written beside it"""
    manifest_path = Path(manifest_path)
    rows = read_manifest(manifest_path)
    parents = {row.parent_name for row in rows}
    if len(parents) > 1:
        raise InvalidInputError(f"Manifest {manifest_path} mixes parents {sorted(parents)}")
    width, height = parent_extent(rows)
    records = []
    for row in rows:
        cutout_path = manifest_path.parent / row.cutout_name
        try:
            with Image.open(cutout_path) as image:
                pixels = pixels_from_pil(image)
        except (OSError, UnidentifiedImageError) as e:
            raise UnreadableImageError(f"Cannot read cutout {cutout_path}: {e}") from e
        records.append(TileRecord(
            parent_name=row.parent_name,
            row=row.row,
            col=row.col,
            height=row.height,
            width=row.width,
            pixels=pixels,
            parent_width=width,
            parent_height=height,
        ))
    return records
