"""
Ground-truth and timing files.
"""
import csv
import io
import json
import logging
from pathlib import Path

from apps.core.exceptions import DetectionParseError, UnwritableOutputError
from apps.core.types import BoundingBox, GroundTruthLabel

logger = logging.getLogger(__name__)

GT_COLUMNS = ('class_name', 'xmin', 'ymin', 'xmax', 'ymax')


def read_ground_truth(path, class_table):
    """CSV with a ``class_name,xmin,ymin,xmax,ymax`` header; global pixels"""
    path = Path(path)
    try:
        text = path.read_text(encoding='utf-8')
    except OSError as e:
        raise DetectionParseError(f"Cannot read ground truth {path}: {e}") from e
    labels = []
    for line_number, cells in enumerate(csv.reader(io.StringIO(text)), start=1):
        if not cells:
            continue
        if line_number == 1 and cells[0].strip() == GT_COLUMNS[0]:
            continue
        if len(cells) != len(GT_COLUMNS):
            raise DetectionParseError(f"{path}:{line_number}: expected {len(GT_COLUMNS)} fields, found {len(cells)}")
        try:
            class_id = class_table.id_of(cells[0].strip())
        except KeyError:
            raise DetectionParseError(f"{path}:{line_number}: unknown class {cells[0]!r}") from None
        try:
            box = BoundingBox(*(float(c) for c in cells[1:]))
        except ValueError as e:
            raise DetectionParseError(f"{path}:{line_number}: {e}") from e
        labels.append(GroundTruthLabel(class_id, box))
    logger.info(f"Loaded {len(labels)} ground-truth objects from {path}")
    return labels


def write_ground_truth(labels, class_table, path):
    path = Path(path)
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator='\n')
    writer.writerow(GT_COLUMNS)
    for label in labels:
        writer.writerow([class_table.name_of(label.class_id), *(repr(float(v)) for v in label.box.as_tuple())])
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(buffer.getvalue(), encoding='utf-8')
    except OSError as e:
        raise UnwritableOutputError(f"Cannot write ground truth {path}: {e}") from e
    return path


def write_json(data, path):
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(data, indent=2, sort_keys=True) + '\n', encoding='utf-8')
    except OSError as e:
        raise UnwritableOutputError(f"Cannot write {path}: {e}") from e
    return path
