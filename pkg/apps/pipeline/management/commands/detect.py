from pathlib import Path

from apps.core.exceptions import InvalidConfigError
from apps.detectors.external import write_detection_file
from apps.detectors.registry import build_detector
from apps.pipeline.files import read_ground_truth
from apps.tiling.services import load_tiles

from ..base import PipelineCommand


class Command(PipelineCommand):
    help = 'Run the configured detector over a manifest of cutouts and write tile-local detections'

    def add_command_arguments(self, parser):
        parser.add_argument('manifest', help='Manifest written by the tile command')

    def run_command(self, **options):
        config = self.load_config(options)
        if config.detector is None:
            raise InvalidConfigError(f"{config.source}: detect needs a single detector, not an ensemble")
        if config.detector['type'] in ('oracle', 'gridsim') and config.gt_path is None:
            raise InvalidConfigError(f"{config.source}: {config.detector['type']} needs a ground_truth file")
        manifest = Path(options['manifest'])
        tiles = load_tiles(manifest)
        truths = read_ground_truth(config.gt_path, config.class_table) if config.gt_path else []
        binding = config.resolve_binding(config.detector, 'default')
        detector = build_detector(binding, truths, config.seed)
        batch = detector.detect_batch(tiles, config.class_table, config.workers)
        out = Path(options['out']) if options['out'] else manifest.parent / 'detections.csv'
        if out.is_dir():
            out = out / 'detections.csv'
        write_detection_file(batch.per_tile, config.class_table, out)
        count = sum(len(d) for d in batch.per_tile)
        self.stdout.write(f"{count} detections on {len(tiles)} tiles written to {out}")
