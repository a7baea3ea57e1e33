"""
Domain value objects shared by every pipeline app.

Coordinates are pixels with the origin at the top-left corner and y growing
downward. Boxes are half-open real intervals.
"""
import enum
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from django.conf import settings

from .exceptions import InvalidInputError


@dataclass(frozen=True, order=True)
class BoundingBox:
    """Axis-aligned box in pixels"""

    xmin: float
    ymin: float
    xmax: float
    ymax: float

    def __post_init__(self):
        values = (self.xmin, self.ymin, self.xmax, self.ymax)
        if not all(math.isfinite(v) for v in values):
            raise InvalidInputError(f"Box coordinates must be finite: {values}")
        if self.xmin > self.xmax or self.ymin > self.ymax:
            raise InvalidInputError(f"Box corners out of order: {values}")

    @property
    def width(self):
        return self.xmax - self.xmin

    @property
    def height(self):
        return self.ymax - self.ymin

    @property
    def area(self):
        return (self.xmax - self.xmin) * (self.ymax - self.ymin)

    @property
    def center(self):
        return ((self.xmin + self.xmax) / 2, (self.ymin + self.ymax) / 2)

    def as_tuple(self):
        return (self.xmin, self.ymin, self.xmax, self.ymax)


class Frame(enum.Enum):
    TILE_LOCAL = 'tile_local'
    GLOBAL = 'global'


@dataclass(frozen=True)
class Detection:
    """
    One detector output.

    ``tile_id`` is the owning cutout name while the detection is tile-local
    and its provenance once globalized; ``profile`` names the scale profile
    that produced it inside an ensemble.
    """

    class_id: int
    box: BoundingBox
    confidence: float
    frame: Frame = Frame.GLOBAL
    tile_id: Optional[str] = None
    profile: Optional[str] = None

    def __post_init__(self):
        if not 0.0 <= self.confidence <= 1.0:
            raise InvalidInputError(f"Confidence {self.confidence} outside [0, 1]")
        if self.class_id < 0:
            raise InvalidInputError(f"Negative class id {self.class_id}")
        if self.frame is Frame.TILE_LOCAL and not self.tile_id:
            raise InvalidInputError("Tile-local detections must name their tile")

    def sort_key(self):
        """Canonical ordering: class, descending confidence, then box and provenance"""
        return (self.class_id, -self.confidence, self.box.as_tuple(), self.tile_id or '', self.profile or '')


@dataclass(frozen=True)
class GroundTruthLabel:
    class_id: int
    box: BoundingBox


@dataclass(frozen=True)
class ClassEntry:
    class_id: int
    name: str
    small_object: bool = False
    min_size_m: Optional[float] = None
    max_size_m: Optional[float] = None


@dataclass(frozen=True)
class ClassTable:
    """Ordered class list with dense ids starting at 0"""

    entries: tuple

    def __post_init__(self):
        names = [entry.name for entry in self.entries]
        if len(set(names)) != len(names):
            raise InvalidInputError(f"Class names must be unique: {names}")
        ids = [entry.class_id for entry in self.entries]
        if ids != list(range(len(ids))):
            raise InvalidInputError(f"Class ids must be dense from 0: {ids}")

    @classmethod
    def from_records(cls, records):
        """Build from dicts with ``name`` and optional ``small_object`` and size bounds"""
        entries = tuple(
            ClassEntry(
                class_id=index,
                name=record['name'],
                small_object=bool(record.get('small_object', False)),
                min_size_m=record.get('min_size_m'),
                max_size_m=record.get('max_size_m'),
            )
            for index, record in enumerate(records)
        )
        return cls(entries)

    @classmethod
    def from_settings(cls):
        return cls.from_records(settings.CLASS_TABLE)

    def __len__(self):
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    def __contains__(self, class_id):
        return 0 <= class_id < len(self.entries)

    def name_of(self, class_id):
        return self.entries[class_id].name

    def id_of(self, name):
        for entry in self.entries:
            if entry.name == name:
                return entry.class_id
        raise KeyError(name)

    def entry(self, class_id):
        return self.entries[class_id]

    @property
    def small_object_ids(self):
        return frozenset(entry.class_id for entry in self.entries if entry.small_object)


@dataclass(frozen=True, eq=False)
class RasterImage:
    """Pixel grid plus ground sample distance in meters per pixel"""

    name: str
    pixels: np.ndarray = field(repr=False)
    gsd: float

    def __post_init__(self):
        pixels = np.asarray(self.pixels)
        if pixels.dtype != np.uint8:
            raise InvalidInputError(f"Image {self.name} must be 8-bit, got {pixels.dtype}")
        if pixels.ndim == 3 and pixels.shape[2] == 1:
            pixels = pixels[:, :, 0]
        if pixels.ndim not in (2, 3) or (pixels.ndim == 3 and pixels.shape[2] != 3):
            raise InvalidInputError(f"Image {self.name} must have 1 or 3 bands, got shape {pixels.shape}")
        if pixels.shape[0] < 1 or pixels.shape[1] < 1:
            raise InvalidInputError(f"Image {self.name} is empty")
        if not (math.isfinite(self.gsd) and self.gsd > 0):
            raise InvalidInputError(f"Image {self.name} gsd must be positive, got {self.gsd}")
        if pixels.flags.writeable:
            pixels = pixels.copy()
            pixels.flags.writeable = False
        object.__setattr__(self, 'pixels', pixels)

    @property
    def height(self):
        return self.pixels.shape[0]

    @property
    def width(self):
        return self.pixels.shape[1]

    @property
    def bands(self):
        return 1 if self.pixels.ndim == 2 else 3

    def replace(self, **changes):
        values = {'name': self.name, 'pixels': self.pixels, 'gsd': self.gsd}
        values.update(changes)
        return RasterImage(**values)
