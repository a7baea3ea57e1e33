"""
Adapters for detectors that live outside this process.

Both speak the detection-file format, one detection per line:

    cutout_name,class_name,xmin,ymin,xmax,ymax,confidence

with tile-local pixel coordinates. A leading header line is allowed.
"""
import csv
import io
import logging
import shlex
import subprocess
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import requests
from django.conf import settings

from apps.core.exceptions import (
    DetectionParseError,
    DetectorProcessError,
    UnknownCutoutError,
    UnwritableOutputError,
)
from apps.core.geometry import clamp_box, clamp_confidence
from apps.core.imaging import encode_png
from apps.core.types import BoundingBox, Detection, Frame
from apps.tiling.services import read_manifest, write_cutouts, write_manifest

from .base import BatchResult, Detector

logger = logging.getLogger(__name__)

DETECTION_COLUMNS = ('cutout_name', 'class_name', 'xmin', 'ymin', 'xmax', 'ymax', 'confidence')
MANIFEST_FILENAME = 'manifest.tsv'
OUTPUT_FILENAME = 'detections.csv'
STDERR_TAIL = 2000


def parse_detection_text(text, extents, class_table, source='<detections>'):
    """
    Parse detection-file text into {cutout_name: [Detection]}.

    ``extents`` maps every known cutout name to its (width, height) as the
    detector saw it; boxes are clamped to that extent. Every known cutout
    gets an entry, empty when nothing was reported for it.
    """
    per_tile = {name: [] for name in extents}
    reader = csv.reader(io.StringIO(text))
    for line_number, cells in enumerate(reader, start=1):
        if not cells or all(not c.strip() for c in cells):
            continue
        if line_number == 1 and cells[0].strip() == DETECTION_COLUMNS[0]:
            continue
        if len(cells) != len(DETECTION_COLUMNS):
            raise DetectionParseError(
                f"{source}:{line_number}: expected {len(DETECTION_COLUMNS)} fields, found {len(cells)}"
            )
        name, class_name = cells[0].strip(), cells[1].strip()
        if name not in extents:
            raise UnknownCutoutError(f"{source}:{line_number}: unknown cutout {name!r}")
        try:
            class_id = class_table.id_of(class_name)
        except KeyError:
            raise DetectionParseError(f"{source}:{line_number}: unknown class {class_name!r}") from None
        try:
            xmin, ymin, xmax, ymax, confidence = (float(c) for c in cells[2:])
            box = BoundingBox(min(xmin, xmax), min(ymin, ymax), max(xmin, xmax), max(ymin, ymax))
        except ValueError as e:
            raise DetectionParseError(f"{source}:{line_number}: {e}") from e
        if confidence != confidence:
            raise DetectionParseError(f"{source}:{line_number}: confidence is not a number")
        width, height = extents[name]
        per_tile[name].append(Detection(
            class_id=class_id,
            box=clamp_box(box, width, height),
            confidence=clamp_confidence(confidence, f"{source}:{line_number}"),
            frame=Frame.TILE_LOCAL,
            tile_id=name,
        ))
    return per_tile


def read_detection_file(path, extents, class_table):
    path = Path(path)
    try:
        text = path.read_text(encoding='utf-8')
    except OSError as e:
        raise DetectionParseError(f"Cannot read detection file {path}: {e}") from e
    return parse_detection_text(text, extents, class_table, source=str(path))


def format_detection_rows(per_tile, class_table):
    """Detection-file text for tile-local detections, tiles in the given order"""
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator='\n')
    writer.writerow(DETECTION_COLUMNS)
    for detections in per_tile:
        for d in detections:
            writer.writerow([
                d.tile_id, class_table.name_of(d.class_id),
                repr(d.box.xmin), repr(d.box.ymin), repr(d.box.xmax), repr(d.box.ymax),
                repr(d.confidence),
            ])
    return buffer.getvalue()


def write_detection_file(per_tile, class_table, path):
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(format_detection_rows(per_tile, class_table), encoding='utf-8')
    except OSError as e:
        raise UnwritableOutputError(f"Cannot write detections {path}: {e}") from e
    return path


def build_command(command_template, manifest, output, workdir):
    """Split the template shell-style, then fill {manifest}, {output} and {workdir} per token"""
    try:
        tokens = shlex.split(command_template)
        return [
            token.format(manifest=str(manifest), output=str(output), workdir=str(workdir))
            for token in tokens
        ]
    except (ValueError, KeyError, IndexError) as e:
        raise DetectorProcessError(f"Bad command template {command_template!r}: {e}") from e


def run_external(command_template, manifest_path, workdir, timeout=None):
    """Run the external program once; returns (output path, elapsed seconds)"""
    workdir = Path(workdir)
    output = workdir / OUTPUT_FILENAME
    if output.exists():
        output.unlink()
    timeout = timeout if timeout is not None else settings.PIPELINE['EXTERNAL_TIMEOUT']
    command = build_command(command_template, manifest_path, output, workdir)
    logger.info(f"Running external detector: {' '.join(command)}")
    started = time.perf_counter()
    try:
        completed = subprocess.run(command, cwd=workdir, capture_output=True, text=True, timeout=timeout)
    except FileNotFoundError as e:
        logger.error(f"External detector not found: {command[0]}")
        raise DetectorProcessError(f"Cannot start {command[0]!r}: {e}") from e
    except subprocess.TimeoutExpired as e:
        logger.error(f"External detector timed out after {timeout} s")
        raise DetectorProcessError(f"{command[0]!r} timed out after {timeout} s") from e
    elapsed = time.perf_counter() - started
    if completed.returncode != 0:
        stderr = (completed.stderr or '')[-STDERR_TAIL:]
        logger.error(f"External detector exited with {completed.returncode}: {stderr}")
        raise DetectorProcessError(f"{command[0]!r} exited with status {completed.returncode}: {stderr.strip()}")
    if not output.is_file():
        logger.error(f"External detector produced no {output}")
        raise DetectorProcessError(f"{command[0]!r} did not write {output}")
    return output, elapsed


def external_detect(manifest_path, workdir, command_template, class_table, timeout=None):
    """
    Invoke the external program once over a manifest of cutouts.

    Returns {cutout_name: [Detection]} in manifest order.
    """
    rows = read_manifest(manifest_path)
    extents = {row.cutout_name: (row.width, row.height) for row in rows}
    output, _ = run_external(command_template, Path(manifest_path).resolve(), workdir, timeout)
    return read_detection_file(output, extents, class_table)


@dataclass(frozen=True)
class ExternalProcessDetector(Detector):
    """One external invocation per batch; cutouts and manifest are staged in ``workdir``"""

    command_template: str
    workdir: Path
    timeout: Optional[float] = None

    identifier = 'external'

    def detect(self, tile, class_table):
        return self.detect_batch([tile], class_table).per_tile[0]

    def detect_batch(self, tiles, class_table, workers=1):
        workdir = Path(self.workdir)
        write_cutouts(tiles, workdir)
        manifest = write_manifest(tiles, workdir / MANIFEST_FILENAME)
        output, elapsed = run_external(self.command_template, manifest.resolve(), workdir, self.timeout)
        extents = {tile.name: (tile.detector_width, tile.detector_height) for tile in tiles}
        by_name = read_detection_file(output, extents, class_table)
        per_tile = [by_name[tile.name] for tile in tiles]
        logger.info(f"external: {sum(len(d) for d in per_tile)} detections on {len(tiles)} tiles ({elapsed:.3f} s)")
        return BatchResult(per_tile=per_tile, detector_seconds=elapsed)


@dataclass(frozen=True)
class HttpDetector(Detector):
    """POSTs each cutout PNG to a model server that answers in the detection-file format"""

    url: str
    timeout: Optional[float] = None

    identifier = 'http'

    def detect(self, tile, class_table):
        timeout = self.timeout if self.timeout is not None else settings.PIPELINE['HTTP_TIMEOUT']
        files = {'image': (tile.name, encode_png(tile.detector_pixels), 'image/png')}
        try:
            response = requests.post(self.url, files=files, data={'cutout_name': tile.name}, timeout=timeout)
            response.raise_for_status()
        except requests.RequestException as e:
            logger.error(f"Model server {self.url} failed on {tile.name}: {e}")
            raise DetectorProcessError(f"Model server {self.url} failed on {tile.name}: {e}") from e
        extents = {tile.name: (tile.detector_width, tile.detector_height)}
        return parse_detection_text(response.text, extents, class_table, source=self.url)[tile.name]
