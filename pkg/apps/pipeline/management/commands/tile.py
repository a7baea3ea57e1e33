from pathlib import Path

from apps.core.imaging import read_raster
from apps.tiling.services import TileSpec, extract_tiles, write_cutouts, write_manifest

from ..base import PipelineCommand


class Command(PipelineCommand):
    help = 'Cut an image into overlapping cutouts and write the manifest'

    def add_command_arguments(self, parser):
        parser.add_argument('image', help='PNG image with a JSON gsd sidecar')

    def run_command(self, **options):
        config = self.load_config(options, required=False)
        image = read_raster(options['image'])
        if config is not None:
            spec = config.tile_spec
        else:
            spec = TileSpec.from_settings(window=options['window_px'], overlap_frac=options['overlap'])
        out_dir = Path(options['out'] or f"{image.name}_tiles")
        tiles = extract_tiles(image, spec)
        write_cutouts(tiles, out_dir)
        manifest = write_manifest(tiles, out_dir / 'manifest.tsv')
        self.stdout.write(f"{len(tiles)} tiles written to {out_dir} (manifest {manifest.name})")
