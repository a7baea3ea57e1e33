"""
Raster ingestion: 8-bit PNG plus a JSON sidecar holding name and gsd.
"""
import json
import logging
from io import BytesIO
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from .exceptions import MissingGsdError, UnreadableImageError, UnwritableOutputError
from .types import RasterImage

logger = logging.getLogger(__name__)


def sidecar_path(image_path):
    image_path = Path(image_path)
    return image_path.with_suffix('.json')


def read_sidecar(image_path):
    path = sidecar_path(image_path)
    if not path.exists():
        raise MissingGsdError(f"No gsd sidecar {path} for {image_path}")
    try:
        data = json.loads(path.read_text(encoding='utf-8'))
    except (OSError, ValueError) as e:
        raise MissingGsdError(f"Unreadable gsd sidecar {path}: {e}") from e
    gsd = data.get('gsd_m') if isinstance(data, dict) else None
    if not isinstance(gsd, (int, float)) or isinstance(gsd, bool) or gsd <= 0:
        raise MissingGsdError(f"Sidecar {path} lacks a positive gsd_m")
    return {'name': data.get('name') or Path(image_path).stem, 'gsd_m': float(gsd)}


def pixels_from_pil(image):
    """Convert a PIL image to a uint8 array with 1 or 3 bands"""
    if image.mode not in ('L', 'RGB'):
        image = image.convert('L' if image.mode in ('1', 'LA', 'I', 'I;16', 'F') else 'RGB')
    return np.asarray(image, dtype=np.uint8)


def read_raster(path):
    """Load an image and its sidecar into a RasterImage"""
    path = Path(path)
    if not path.is_file():
        raise UnreadableImageError(f"Image {path} does not exist")
    meta = read_sidecar(path)
    try:
        with Image.open(path) as image:
            pixels = pixels_from_pil(image)
    except (OSError, UnidentifiedImageError) as e:
        raise UnreadableImageError(f"Cannot read image {path}: {e}") from e
    logger.info(f"Loaded {path.name}: {pixels.shape[1]}x{pixels.shape[0]} px at {meta['gsd_m']} m/px")
    return RasterImage(name=meta['name'], pixels=pixels, gsd=meta['gsd_m'])


def encode_png(pixels):
    """PNG bytes for a 1- or 3-band uint8 array"""
    buffer = BytesIO()
    Image.fromarray(np.ascontiguousarray(pixels)).save(buffer, format='PNG')
    return buffer.getvalue()


def write_raster(image, path, with_sidecar=True):
    """Write a RasterImage as PNG (and sidecar unless disabled)"""
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        Image.fromarray(np.ascontiguousarray(image.pixels)).save(path, format='PNG')
        if with_sidecar:
            sidecar = {'name': image.name, 'gsd_m': image.gsd}
            sidecar_path(path).write_text(json.dumps(sidecar, sort_keys=True) + '\n', encoding='utf-8')
    except OSError as e:
        raise UnwritableOutputError(f"Cannot write {path}: {e}") from e
    return path
