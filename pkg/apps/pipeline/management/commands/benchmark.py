from apps.evaluation.services import gpus_for_daily_area
from apps.pipeline.services import run_pipeline

from ..base import PipelineCommand


class Command(PipelineCommand):
    help = 'Run a config and report per-stage timings, km2/s and the overhead factor'

    def add_command_arguments(self, parser):
        parser.add_argument(
            '--daily-km2', type=float, dest='daily_km2',
            help='Daily collection area; reports the detector instances needed to keep pace',
        )

    def run_command(self, **options):
        config = self.load_config(options)
        timings = run_pipeline(config).timings
        self.stdout.write(f"area            {timings['area_km2']:.4f} km2")
        self.stdout.write(f"tiles           {timings['tiles']}")
        for stage in ('tiling', 'detection', 'stitching', 'evaluation'):
            self.stdout.write(f"{stage:<15} {timings[stage]:.3f} s")
        self.stdout.write(f"detector time   {timings['detector_seconds']:.3f} s")
        self.stdout.write(f"wall time       {timings['wall']:.3f} s")
        if 'rate_km2_per_s' in timings:
            self.stdout.write(f"rate            {timings['rate_km2_per_s']:.4f} km2/s")
            self.stdout.write(f"overhead factor {timings['overhead_factor']:.3f}")
            if options['daily_km2'] is not None:
                instances = gpus_for_daily_area(options['daily_km2'], timings['rate_km2_per_s'])
                self.stdout.write(f"instances       {instances} for {options['daily_km2']:g} km2/day")
        for name, (grid_w, grid_h) in sorted(timings.get('grids', {}).items()):
            self.stdout.write(f"grid {name:<10} {grid_w}x{grid_h}")
