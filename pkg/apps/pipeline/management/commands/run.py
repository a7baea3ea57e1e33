from apps.pipeline.services import run_pipeline

from ..base import PipelineCommand


class Command(PipelineCommand):
    help = 'Tile, detect, stitch and (with ground truth) evaluate as one run'

    def run_command(self, **options):
        config = self.load_config(options)
        result = run_pipeline(config)
        self.stdout.write(f"{len(result.detections)} detections written to {result.detections_path}")
        if result.report is not None:
            self.stdout.write(f"mAP {result.report.map:.4f} (report in {config.out_dir})")
