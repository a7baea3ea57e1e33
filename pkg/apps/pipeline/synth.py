"""
Synthetic test scenes: square objects of class-specific intensity on a
textured background, with exact ground truth.
"""
import logging
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from apps.core.exceptions import InfeasibleSceneError, InvalidConfigError, PipelineError
from apps.core.geometry import boxes_to_array, iou_against
from apps.core.imaging import write_raster
from apps.core.types import BoundingBox, GroundTruthLabel, RasterImage

from .config import load_json, validate
from .files import write_ground_truth
from .serializers import SceneSpecSerializer

logger = logging.getLogger(__name__)

MAX_ATTEMPTS = 1000
TEXTURE_CELL = 8
BACKGROUND_LEVELS = (70, 110)
PALETTE = (
    (235, 235, 235),
    (40, 90, 200),
    (220, 200, 40),
    (200, 60, 60),
    (60, 200, 90),
    (160, 60, 200),
)


@dataclass(frozen=True)
class SceneObject:
    class_name: str
    count: int
    size_m: float


@dataclass(frozen=True)
class SceneSpec:
    name: str
    gsd_m: float
    width_px: int
    height_px: int
    bands: int = 3
    seed: int = 0
    max_overlap: float = 0.0
    objects: tuple = ()

    @classmethod
    def from_data(cls, data):
        if data.get('extent_m') is not None:
            width = height = max(1, round(data['extent_m'] / data['gsd_m']))
        else:
            width, height = data['width_px'], data['height_px']
        return cls(
            name=data['name'],
            gsd_m=data['gsd_m'],
            width_px=width,
            height_px=height,
            bands=data.get('bands', 3),
            seed=data.get('seed', 0),
            max_overlap=data.get('max_overlap', 0.0),
            objects=tuple(
                SceneObject(o['class_name'], o['count'], o['size_m']) for o in data.get('objects', [])
            ),
        )

    @classmethod
    def from_file(cls, path):
        path = Path(path).resolve()
        return cls.from_data(validate(SceneSpecSerializer, load_json(path), path))


def object_side_px(size_m, gsd):
    side = size_m / gsd
    nearest = round(side)
    return float(nearest) if math.isclose(side, nearest, rel_tol=0.0, abs_tol=1e-9) else side


def _background(spec, rng):
    rows = spec.height_px // TEXTURE_CELL + 1
    cols = spec.width_px // TEXTURE_CELL + 1
    low, high = BACKGROUND_LEVELS
    coarse = rng.integers(low, high, size=(rows, cols), dtype=np.int16)
    texture = np.repeat(np.repeat(coarse, TEXTURE_CELL, axis=0), TEXTURE_CELL, axis=1)
    texture = texture[:spec.height_px, :spec.width_px]
    grain = rng.integers(-6, 7, size=(spec.height_px, spec.width_px), dtype=np.int16)
    gray = np.clip(texture + grain, 0, 255).astype(np.uint8)
    if spec.bands == 1:
        return gray
    return np.stack([gray, gray, gray], axis=-1)


def place_objects(spec, class_table, rng):
    """Rejection sampling of integer top-left corners under the max-overlap constraint"""
    placed = []
    boxes = np.zeros((0, 4), dtype=np.float64)
    for item in spec.objects:
        try:
            class_id = class_table.id_of(item.class_name)
        except KeyError:
            raise InvalidConfigError(f"Scene {spec.name} uses unknown class {item.class_name!r}") from None
        side = object_side_px(item.size_m, spec.gsd_m)
        span = math.ceil(side)
        if span > spec.width_px or span > spec.height_px:
            raise InfeasibleSceneError(
                f"{item.class_name} of {item.size_m} m ({side:.1f} px) does not fit a "
                f"{spec.width_px}x{spec.height_px} scene"
            )
        for index in range(item.count):
            for _ in range(MAX_ATTEMPTS):
                x = int(rng.integers(0, spec.width_px - span + 1))
                y = int(rng.integers(0, spec.height_px - span + 1))
                box = BoundingBox(float(x), float(y), x + side, y + side)
                if len(boxes) == 0 or iou_against(box, boxes).max() <= spec.max_overlap:
                    break
            else:
                raise InfeasibleSceneError(
                    f"Could not place {item.class_name} #{index + 1} of {item.count} in scene {spec.name} "
                    f"after {MAX_ATTEMPTS} attempts at max overlap {spec.max_overlap}"
                )
            placed.append(GroundTruthLabel(class_id, box))
            boxes = np.vstack([boxes, boxes_to_array([box])])
    return placed


def render_scene(spec, class_table):
    """RasterImage and ground truth for a scene spec; identical for identical specs"""
    rng = np.random.default_rng(spec.seed)
    labels = place_objects(spec, class_table, rng)
    pixels = _background(spec, rng)
    for label in labels:
        colour = PALETTE[label.class_id % len(PALETTE)]
        box = label.box
        x0, y0 = int(math.floor(box.xmin)), int(math.floor(box.ymin))
        x1, y1 = int(math.ceil(box.xmax)), int(math.ceil(box.ymax))
        pixels[y0:y1, x0:x1] = colour[0] if spec.bands == 1 else colour
    try:
        image = RasterImage(name=spec.name, pixels=pixels, gsd=spec.gsd_m)
    except PipelineError as e:
        raise InvalidConfigError(f"Scene {spec.name}: {e}") from e
    logger.info(f"Rendered scene {spec.name}: {spec.width_px}x{spec.height_px} px, {len(labels)} objects")
    return image, labels


def write_scene(image, labels, class_table, out_dir):
    """``<name>.png``, its sidecar and ``<name>_gt.csv``"""
    out_dir = Path(out_dir)
    image_path = write_raster(image, out_dir / f"{image.name}.png")
    gt_path = write_ground_truth(labels, class_table, out_dir / f"{image.name}_gt.csv")
    return image_path, gt_path
