from pathlib import Path

from apps.augment.services import (
    augment_chip,
    cut_training_chips,
    load_chip,
    read_training_list,
    save_chip,
    write_training_list,
)
from apps.core.exceptions import InvalidInputError
from apps.core.imaging import read_raster
from apps.pipeline.config import load_augment_spec
from apps.pipeline.files import read_ground_truth

from ..base import PipelineCommand


class Command(PipelineCommand):
    help = 'Rotate and HSV-jitter training chips; optionally cut them from a labelled image first'

    def add_command_arguments(self, parser):
        parser.add_argument('train_list', nargs='?', help='Training list: image path and label path per line')
        parser.add_argument('--spec', required=True, help='Augmentation spec (JSON)')
        parser.add_argument('--image', help='Labelled image to cut chips from instead of a training list')
        parser.add_argument('--labels', help='Ground-truth CSV for --image')
        parser.add_argument('--chip-window-m', type=float, dest='chip_window_m', default=125.0)
        parser.add_argument('--empty-fraction', type=float, dest='empty_fraction', default=0.0)

    def chips(self, options, class_table):
        if options['image']:
            if not options['labels']:
                raise InvalidInputError('--image needs --labels')
            image = read_raster(options['image'])
            labels = read_ground_truth(options['labels'], class_table)
            return cut_training_chips(
                image, labels, options['chip_window_m'],
                empty_fraction=options['empty_fraction'],
                overlap_frac=options['overlap'],
                seed=options['seed'] or 0,
            )
        if not options['train_list']:
            raise InvalidInputError('Give a training list or --image with --labels')
        return [load_chip(image, labels, class_table) for image, labels in read_training_list(options['train_list'])]

    def run_command(self, **options):
        spec = load_augment_spec(options['spec'])
        class_table = self.class_table(options)
        out_dir = Path(options['out'] or 'augmented')
        entries = []
        for index, chip in enumerate(self.chips(options, class_table)):
            for variant, augmented in enumerate(augment_chip(chip, spec, index)):
                entries.append(save_chip(augmented, f"chip{index:05d}_{variant:02d}", out_dir, class_table))
        write_training_list(entries, out_dir / 'train.txt')
        self.stdout.write(f"{len(entries)} chips written to {out_dir}")
