from pathlib import Path

from apps.core.exceptions import MixedParentError
from apps.core.types import ClassTable
from apps.evaluation.reports import plot_pr_curves, write_csv_report, write_pr_data, write_text_report
from apps.evaluation.services import EvalConfig, evaluate
from apps.pipeline.files import read_ground_truth
from apps.stitching.services import read_detections

from ..base import PipelineCommand


class Command(PipelineCommand):
    help = 'Score a global detection file against ground truth'

    def add_command_arguments(self, parser):
        parser.add_argument('detections', help='Global detection file')
        parser.add_argument('ground_truth', help='Ground-truth CSV')

    def run_command(self, **options):
        config = self.load_config(options, required=False)
        if config is not None:
            class_table, cfg = config.class_table, config.eval_config()
        else:
            class_table = ClassTable.from_settings()
            cfg = EvalConfig.from_settings(class_table=class_table, nms_iou=options['nms_iou'])
        by_parent = read_detections(options['detections'], class_table)
        if len(by_parent) > 1:
            raise MixedParentError(f"Detection file covers several images: {sorted(by_parent)}")
        detections = next(iter(by_parent.values()), [])
        truths = read_ground_truth(options['ground_truth'], class_table)
        report = evaluate([(detections, truths)], class_table, cfg)
        out_dir = Path(options['out'] or 'report')
        write_text_report(report, out_dir / 'report.txt')
        write_csv_report(report, out_dir / 'report.csv')
        write_pr_data(report, out_dir / 'pr_curves')
        plot_pr_curves(report, out_dir / 'pr_curves.png')
        self.stdout.write(f"mAP {report.map:.4f} (report in {out_dir})")
