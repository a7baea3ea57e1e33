import string
import tempfile
from pathlib import Path

import numpy as np
from django.test import SimpleTestCase
from hypothesis import given
from hypothesis import settings as hypothesis_settings
from hypothesis import strategies as st

from apps.core.exceptions import InvalidInputError, MalformedNameError
from apps.core.types import RasterImage

from .services import (
    TileRecord,
    TileSpec,
    cutout_name,
    extract_tiles,
    load_tiles,
    parse_cutout_name,
    plan_axis,
    plan_tiles,
    read_manifest,
    write_cutouts,
    write_manifest,
)


def gradient_image(width, height, name='scene', bands=3):
    ys, xs = np.mgrid[0:height, 0:width]
    gray = ((xs * 7 + ys * 13) % 256).astype(np.uint8)
    pixels = np.dstack([gray, 255 - gray, gray // 2]) if bands == 3 else gray
    return RasterImage(name, pixels, 0.3)


class TileSpecTests(SimpleTestCase):
    def test_defaults_come_from_settings(self):
        spec = TileSpec.from_settings()
        self.assertEqual((spec.window, spec.overlap_frac), (416, 0.15))
        self.assertEqual(spec.stride, 353)

    def test_rejects_bad_values(self):
        with self.assertRaises(InvalidInputError):
            TileSpec(0, 0.1)
        with self.assertRaises(InvalidInputError):
            TileSpec(416, 1.0)
        with self.assertRaises(InvalidInputError):
            TileSpec(416, -0.1)

    def test_tiny_stride_is_rejected(self):
        with self.assertRaises(InvalidInputError):
            TileSpec(2, 0.9).stride


class PlanTests(SimpleTestCase):
    def test_offsets_for_thousand_pixel_axis(self):
        self.assertEqual(plan_axis(1000, 416, 353), [0, 353, 584])

    def test_nine_tiles_for_thousand_pixel_square(self):
        offsets = plan_tiles(1000, 1000, TileSpec(416, 0.15))
        self.assertEqual(len(offsets), 9)
        self.assertEqual(offsets[0], (0, 0))
        self.assertEqual(offsets[1], (0, 353))
        self.assertEqual(offsets[-1], (584, 584))

    def test_small_image_gets_single_tile(self):
        self.assertEqual(plan_tiles(200, 100, TileSpec(416, 0.15)), [(0, 0)])

    def test_exact_fit_has_no_duplicate_offset(self):
        self.assertEqual(plan_axis(416, 416, 353), [0])
        self.assertEqual(plan_axis(769, 416, 353), [0, 353])

    @hypothesis_settings(max_examples=200, deadline=None)
    @given(st.integers(50, 5000), st.integers(50, 5000))
    def test_default_grid_covers_and_overlaps(self, width, height):
        spec = TileSpec(416, 0.15)
        covered = np.zeros((height, width), dtype=bool)
        for row, col in plan_tiles(width, height, spec):
            covered[row:row + 416, col:col + 416] = True
        self.assertTrue(covered.all())
        for extent in (width, height):
            offsets = plan_axis(extent, 416, spec.stride)
            for a, b in zip(offsets, offsets[1:]):
                self.assertGreaterEqual(a + 416 - b, 62)

    def test_rejects_empty_image(self):
        with self.assertRaises(InvalidInputError):
            plan_tiles(0, 10, TileSpec(416, 0.15))

    @given(st.integers(1, 3000), st.integers(8, 600), st.floats(0.0, 0.6))
    def test_axis_is_covered_and_within_bounds(self, extent, window, overlap):
        spec = TileSpec(window, overlap)
        offsets = plan_axis(extent, window, spec.stride)
        side = min(window, extent)
        covered = np.zeros(extent, dtype=bool)
        for offset in offsets:
            self.assertGreaterEqual(offset, 0)
            self.assertLessEqual(offset + side, extent)
            covered[offset:offset + side] = True
        self.assertTrue(covered.all())
        self.assertEqual(offsets, sorted(set(offsets)))


class NamingTests(SimpleTestCase):
    def test_cutout_name(self):
        self.assertEqual(cutout_name('scene_a', 353, 0, 416, 416, 'png'), 'scene_a|353_0_416_416.png')

    def test_parse_inverts_name(self):
        self.assertEqual(parse_cutout_name('scene_a|353_0_416_416.png'), ('scene_a', 353, 0, 416, 416, 'png'))

    @hypothesis_settings(max_examples=1000, deadline=None)
    @given(
        st.text(st.characters(blacklist_characters='|\t\n\r/', blacklist_categories=('Cs',)), min_size=1),
        st.integers(0, 10 ** 6), st.integers(0, 10 ** 6), st.integers(1, 5000), st.integers(1, 5000),
        st.text(alphabet=string.ascii_letters + string.digits, min_size=1, max_size=5),
    )
    def test_names_parse_back(self, parent, row, col, h, w, ext):
        name = cutout_name(parent, row, col, h, w, ext)
        self.assertEqual(parse_cutout_name(name), (parent, row, col, h, w, ext))

    def test_literal_example_parses(self):
        self.assertEqual(
            parse_cutout_name('panama50cm|1370_1180_416_416.tif'), ('panama50cm', 1370, 1180, 416, 416, 'tif')
        )

    def test_parent_with_delimiter_is_rejected(self):
        with self.assertRaises(MalformedNameError):
            cutout_name('a|b', 0, 0, 10, 10, 'png')

    def test_malformed_names(self):
        for name in ('scene.png', 'scene|1_2_3.png', 'scene|1_2_3_x.png', 'scene|01_2_3_4.png', 'scene|1_2_3_4',
                     '|1_2_3_4.png', 'scene|-1_2_3_4.png'):
            with self.subTest(name=name):
                with self.assertRaises(MalformedNameError):
                    parse_cutout_name(name)


class ExtractTests(SimpleTestCase):
    def test_tiles_match_parent_pixels(self):
        image = gradient_image(1000, 700)
        tiles = extract_tiles(image, TileSpec(416, 0.15))
        self.assertEqual(len(tiles), 3 * 2)
        for tile in tiles:
            np.testing.assert_array_equal(
                tile.pixels, image.pixels[tile.row:tile.row + tile.height, tile.col:tile.col + tile.width]
            )
            self.assertEqual((tile.height, tile.width), (416, 416))

    def test_small_image_tile_has_image_size(self):
        tiles = extract_tiles(gradient_image(120, 90, bands=1), TileSpec(416, 0.15))
        self.assertEqual(len(tiles), 1)
        self.assertEqual((tiles[0].height, tiles[0].width), (90, 120))
        self.assertEqual(tiles[0].name, 'scene|0_0_90_120.png')

    def test_upsampled_detector_pixels(self):
        pixels = np.arange(4, dtype=np.uint8).reshape(2, 2)
        tile = TileRecord('scene', 0, 0, 2, 2, pixels, 2, 2, scale=2)
        self.assertEqual(tile.detector_pixels.shape, (4, 4))
        self.assertEqual((tile.detector_width, tile.detector_height), (4, 4))
        self.assertEqual(tile.detector_pixels[1, 1], 0)
        self.assertEqual(tile.detector_pixels[3, 3], 3)

    def test_fractional_scale_is_rejected(self):
        with self.assertRaises(InvalidInputError):
            TileRecord('scene', 0, 0, 2, 2, np.zeros((2, 2), dtype=np.uint8), 2, 2, scale=1.5)


class ManifestTests(SimpleTestCase):
    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.dir = Path(self.tmp.name)

    def tearDown(self):
        self.tmp.cleanup()

    def test_manifest_and_cutouts_reload(self):
        image = gradient_image(800, 500)
        tiles = extract_tiles(image, TileSpec(416, 0.15))
        write_cutouts(tiles, self.dir)
        manifest = write_manifest(tiles, self.dir / 'manifest.tsv')
        first_line = manifest.read_text().splitlines()[0]
        self.assertEqual(first_line, 'scene|0_0_416_416.png\tscene\t0\t0\t416\t416')

        reloaded = load_tiles(manifest)
        self.assertEqual([t.name for t in reloaded], [t.name for t in tiles])
        self.assertEqual((reloaded[0].parent_width, reloaded[0].parent_height), (800, 500))
        for original, loaded in zip(tiles, reloaded):
            np.testing.assert_array_equal(original.pixels, loaded.pixels)

    def test_disagreeing_manifest_row(self):
        path = self.dir / 'manifest.tsv'
        path.write_text('scene|0_0_416_416.png\tscene\t0\t10\t416\t416\n')
        with self.assertRaises(InvalidInputError):
            read_manifest(path)

    def test_short_manifest_row(self):
        path = self.dir / 'manifest.tsv'
        path.write_text('scene|0_0_416_416.png\tscene\t0\n')
        with self.assertRaises(InvalidInputError):
            read_manifest(path)
