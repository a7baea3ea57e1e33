"""
Shared plumbing for the pipeline management commands.
"""
import logging

from django.core.management.base import BaseCommand, CommandError

from apps.core.exceptions import InvalidInputError, PipelineError
from apps.core.types import ClassTable

from ..config import load_pipeline_config

logger = logging.getLogger(__name__)


class PipelineCommand(BaseCommand):
    """
    Adds the common flags and turns pipeline errors into ``CommandError``
    carrying the error family and its exit code.
    """

    requires_system_checks = []

    def add_arguments(self, parser):
        parser.add_argument('--config', help='Run config (JSON)')
        parser.add_argument('--workers', type=int, help='Worker processes for tile detection')
        parser.add_argument('--seed', type=int, help='Seed for the built-in detectors')
        parser.add_argument('--window-px', type=int, dest='window_px', help='Tile side in pixels')
        parser.add_argument('--overlap', type=float, help='Fraction of the window shared by neighbours')
        parser.add_argument('--nms-iou', type=float, dest='nms_iou', help='Suppression IoU threshold')
        parser.add_argument('--out', help='Output file or folder')
        self.add_command_arguments(parser)

    def add_command_arguments(self, parser):
        pass

    def handle(self, *args, **options):
        try:
            return self.run_command(**options)
        except PipelineError as e:
            logger.error(f"{e.family}: {e}")
            raise CommandError(f"{e.family}: {e}", returncode=e.exit_code) from e

    def run_command(self, **options):
        raise NotImplementedError

    def load_config(self, options, required=True):
        """Run config with command-line overrides applied, or None when absent and optional"""
        if not options.get('config'):
            if required:
                raise InvalidInputError('--config is required')
            return None
        config = load_pipeline_config(options['config'])
        return config.with_overrides(
            workers=options.get('workers'),
            seed=options.get('seed'),
            window_px=options.get('window_px'),
            overlap=options.get('overlap'),
            nms_iou=options.get('nms_iou'),
            out=options.get('out'),
        )

    def class_table(self, options):
        config = self.load_config(options, required=False)
        return config.class_table if config else ClassTable.from_settings()
