import dataclasses
from pathlib import Path

from apps.pipeline.synth import SceneSpec, render_scene, write_scene

from ..base import PipelineCommand


class Command(PipelineCommand):
    help = 'Render a synthetic scene with its gsd sidecar and ground truth'

    def add_command_arguments(self, parser):
        parser.add_argument('scene', help='Scene spec (JSON)')

    def run_command(self, **options):
        spec = SceneSpec.from_file(options['scene'])
        if options['seed'] is not None:
            spec = dataclasses.replace(spec, seed=options['seed'])
        class_table = self.class_table(options)
        image, labels = render_scene(spec, class_table)
        image_path, gt_path = write_scene(image, labels, class_table, Path(options['out'] or '.'))
        self.stdout.write(f"{len(labels)} objects; image {image_path}, ground truth {gt_path}")
