from pathlib import Path

from apps.core.types import ClassTable
from apps.detectors.external import read_detection_file
from apps.stitching.services import stitch, write_detections
from apps.tiling.services import load_tiles

from ..base import PipelineCommand


class Command(PipelineCommand):
    help = 'Merge tile-local detections into one global detection file'

    def add_command_arguments(self, parser):
        parser.add_argument('manifest', help='Manifest written by the tile command')
        parser.add_argument('detections', help='Tile-local detection file')

    def run_command(self, **options):
        config = self.load_config(options, required=False)
        class_table = config.class_table if config else ClassTable.from_settings()
        nms_iou = config.nms_iou if config else options['nms_iou']
        tiles = load_tiles(options['manifest'])
        extents = {tile.name: (tile.detector_width, tile.detector_height) for tile in tiles}
        by_name = read_detection_file(options['detections'], extents, class_table)
        merged = stitch(((tile, by_name[tile.name]) for tile in tiles), nms_iou)
        out = Path(options['out'] or f"{merged.parent_name}_detections.csv")
        write_detections(merged, class_table, out)
        self.stdout.write(f"{len(merged)} detections written to {out}")
