"""
End-to-end orchestration: tile, detect, stitch, merge profiles, evaluate.
"""
import dataclasses
import logging
import time
from dataclasses import dataclass
from typing import Optional

from apps.core.exceptions import InvalidConfigError
from apps.core.imaging import read_raster
from apps.evaluation.reports import plot_pr_curves, write_csv_report, write_pr_data, write_text_report
from apps.evaluation.services import evaluate, scene_area_km2, throughput
from apps.multiscale.services import EnsembleRunner
from apps.stitching.services import write_detections

from .files import read_ground_truth, write_json

logger = logging.getLogger(__name__)

TRUTH_DETECTORS = ('oracle', 'gridsim')


@dataclass(frozen=True)
class RunResult:
    detections: object
    detections_path: object
    report: Optional[object]
    timings: dict


def _bindings(config):
    if config.ensemble is None:
        return [config.detector]
    return [profile['detector'] for profile in config.ensemble['profiles']]


class PipelineRunner:
    """
    Runs one config.

    Detector time is the summed per-tile detect duration; wall time covers
    everything from reading the image to writing the report.
    """

    def __init__(self, config):
        self.config = config

    def run(self):
        config = self.config
        started = time.perf_counter()
        image = read_raster(config.image_path)
        truths = read_ground_truth(config.gt_path, config.class_table) if config.gt_path else []
        if not config.gt_path and any(b['type'] in TRUTH_DETECTORS for b in _bindings(config)):
            raise InvalidConfigError(f"{config.source}: oracle and gridsim detectors need a ground_truth file")

        ensemble = config.build_ensemble(truths, image.gsd)
        runner = EnsembleRunner(ensemble, config.tile_spec, config.class_table, config.workers)
        detections = runner.run(image)
        detections_path = write_detections(
            detections, config.class_table, config.out_dir / f"{image.name}_detections.csv",
        )

        report = None
        evaluation_seconds = 0.0
        if truths:
            eval_started = time.perf_counter()
            report = evaluate([(detections.detections, truths)], config.class_table, config.eval_config())
            evaluation_seconds = time.perf_counter() - eval_started
        wall = time.perf_counter() - started

        timings = {
            'tiling': runner.timings['tiling'],
            'detection': runner.timings['detection'],
            'stitching': runner.timings['stitching'],
            'evaluation': evaluation_seconds,
            # a pool overlaps per-tile work, so the sum can exceed the stage itself
            'detector_seconds': min(runner.timings['detector_seconds'], runner.timings['detection']),
            'detector_seconds_summed': runner.timings['detector_seconds'],
            'wall': wall,
            'tiles': runner.timings['tiles'],
            'grids': runner.timings['grids'],
            'area_km2': scene_area_km2(image.width, image.height, image.gsd),
            'workers': config.workers,
        }
        if timings['detector_seconds'] > 0:
            rate = throughput(timings['area_km2'], timings['detector_seconds'], wall)
            timings['rate_km2_per_s'] = rate.rate_km2_per_s
            timings['overhead_factor'] = rate.overhead_factor
            if report is not None:
                report = dataclasses.replace(report, throughput=rate)
        else:
            logger.warning("Detector time was zero; throughput not reported")

        write_json(timings, config.out_dir / 'timings.json')
        if report is not None:
            write_text_report(report, config.out_dir / 'report.txt')
            write_csv_report(report, config.out_dir / 'report.csv')
            write_pr_data(report, config.out_dir / 'pr_curves')
            plot_pr_curves(report, config.out_dir / 'pr_curves.png')
        logger.info(
            f"Run of {image.name} finished: {len(detections)} detections, "
            f"{timings['tiles']} tiles, {wall:.3f} s wall"
        )
        return RunResult(detections=detections, detections_path=detections_path, report=report, timings=timings)


def run_pipeline(config):
    return PipelineRunner(config).run()
