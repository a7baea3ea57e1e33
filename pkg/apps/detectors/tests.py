import math
import shlex
import sys
import tempfile
import textwrap
from pathlib import Path
from unittest import mock

import numpy as np
import requests
from django.test import SimpleTestCase
from hypothesis import given
from hypothesis import settings as hypothesis_settings
from hypothesis import strategies as st

from apps.core.exceptions import (
    DetectionParseError,
    DetectorProcessError,
    InvalidConfigError,
    InvalidInputError,
    UnknownCutoutError,
)
from apps.core.types import BoundingBox, ClassTable, Frame, GroundTruthLabel, RasterImage
from apps.tiling.services import TileRecord, TileSpec, extract_tiles, write_cutouts, write_manifest

from .base import truncate_to_window, truths_in_tile
from .external import ExternalProcessDetector, HttpDetector, external_detect, parse_detection_text
from .gridsim import GridSimConfig, GridSimDetector, grid_dims, gridsim_detect, nf_layer_size
from .oracle import ConfidenceLaw, OracleDetector, OracleNoiseModel, oracle_detect
from .registry import build_detector


def blank_tile(width=416, height=416, row=0, col=0, parent_width=None, parent_height=None, scale=1, name='scene'):
    return TileRecord(
        parent_name=name, row=row, col=col, height=height, width=width,
        pixels=np.zeros((height, width), dtype=np.uint8),
        parent_width=parent_width or col + width, parent_height=parent_height or row + height,
        scale=scale,
    )


def car(xmin, ymin, side=4):
    return GroundTruthLabel(0, BoundingBox(xmin, ymin, xmin + side, ymin + side))


def lattice_cars(count, spacing=30, side=10, per_row=30):
    return [car((i % per_row) * spacing + 2, (i // per_row) * spacing + 2, side) for i in range(count)]


class TruncationTests(SimpleTestCase):
    window = BoundingBox(100, 100, 200, 200)

    def test_inside_label_is_shifted(self):
        (label,) = truncate_to_window([car(110, 120, 10)], self.window)
        self.assertEqual(label.box, BoundingBox(10, 20, 20, 30))

    def test_mostly_inside_label_is_clipped(self):
        (label,) = truncate_to_window([car(96, 150, 10)], self.window)
        self.assertEqual(label.box, BoundingBox(0, 50, 6, 60))

    def test_half_inside_label_is_dropped(self):
        self.assertEqual(truncate_to_window([car(95, 150, 10)], self.window), [])

    def test_zero_area_label_is_dropped(self):
        flat = GroundTruthLabel(0, BoundingBox(120, 120, 120, 130))
        self.assertEqual(truncate_to_window([flat], self.window), [])

    def test_upsampled_tile_scales_truths(self):
        tile = blank_tile(width=208, height=208, scale=2)
        (label,) = truths_in_tile(tile, [car(10, 20, 10)])
        self.assertEqual(label.box, BoundingBox(20, 40, 40, 60))


class OracleTests(SimpleTestCase):
    def setUp(self):
        self.table = ClassTable.from_settings()

    def test_noiseless_returns_visible_truths(self):
        tile = blank_tile(row=0, col=353, parent_width=1000, parent_height=416)
        truths = [car(360, 50, 10), car(10, 10, 10), car(780, 400, 10)]
        detections = oracle_detect(tile, truths, OracleNoiseModel())
        self.assertEqual([d.box for d in detections], [BoundingBox(7, 50, 17, 60)])
        self.assertEqual(detections[0].confidence, 1.0)
        self.assertIs(detections[0].frame, Frame.TILE_LOCAL)
        self.assertEqual(detections[0].tile_id, 'scene|0_353_416_416.png')

    def test_full_dropout_is_empty(self):
        detections = oracle_detect(blank_tile(), lattice_cars(20), OracleNoiseModel(dropout_prob=1.0))
        self.assertEqual(detections, [])

    def test_half_dropout_follows_binomial_law(self):
        tile = blank_tile(width=1000, height=1000)
        truths = lattice_cars(1000, spacing=30, side=10, per_row=33)
        kept = oracle_detect(tile, truths, OracleNoiseModel(dropout_prob=0.5, seed=11))
        self.assertLessEqual(abs(len(kept) - 500), 3 * math.sqrt(1000 * 0.25))

    def test_fixed_seed_is_deterministic(self):
        noise = OracleNoiseModel(dropout_prob=0.3, fp_rate=4.0, jitter_px=2.0, seed=5)
        tile = blank_tile()
        first = oracle_detect(tile, lattice_cars(40), noise)
        second = oracle_detect(tile, lattice_cars(40), noise)
        self.assertEqual(first, second)

    def test_noise_draws_differ_between_tiles(self):
        noise = OracleNoiseModel(fp_rate=6.0, seed=5)
        left = oracle_detect(blank_tile(col=0, parent_width=900), [], noise)
        right = oracle_detect(blank_tile(col=400, parent_width=900), [], noise)
        self.assertNotEqual([d.box for d in left], [d.box for d in right])

    def test_false_positives_stay_in_tile_and_range(self):
        noise = OracleNoiseModel(fp_rate=20.0, confidence_law=ConfidenceLaw(fp_range=(0.1, 0.2)), seed=3)
        tile = blank_tile()
        detections = oracle_detect(tile, lattice_cars(5), noise)
        false_positives = detections[5:]
        self.assertTrue(false_positives)
        for d in false_positives:
            self.assertTrue(0.1 <= d.confidence <= 0.2)
            self.assertGreaterEqual(d.box.xmin, 0)
            self.assertLessEqual(d.box.xmax, 416)

    def test_noise_model_validation(self):
        with self.assertRaises(InvalidInputError):
            OracleNoiseModel(dropout_prob=1.5)
        with self.assertRaises(InvalidInputError):
            ConfidenceLaw(tp_range=(0.9, 0.8))

    def test_batch_keeps_tile_order_with_workers(self):
        truths = tuple(lattice_cars(200, spacing=40, side=10, per_row=20))
        detector = OracleDetector(truths=truths, noise=OracleNoiseModel(fp_rate=2.0, dropout_prob=0.1, seed=9))
        image_tiles = [
            blank_tile(row=row, col=col, parent_width=800, parent_height=800)
            for row in (0, 353, 384) for col in (0, 353, 384)
        ]
        serial = detector.detect_batch(image_tiles, self.table, workers=1)
        pooled = detector.detect_batch(image_tiles, self.table, workers=2)
        self.assertEqual(serial.per_tile, pooled.per_tile)

    def test_at_resolution_rescales_truths(self):
        detector = OracleDetector(truths=(car(100, 200, 40),))
        coarse = detector.at_resolution(4.0, 4.0)
        self.assertEqual(coarse.truths[0].box, BoundingBox(25, 50, 35, 60))


class GridTests(SimpleTestCase):
    def test_grid_dims(self):
        self.assertEqual(grid_dims(416, 16), (26, 26))
        self.assertEqual(grid_dims(416, 32), (13, 13))
        self.assertEqual(grid_dims(1, 1), (1, 1))

    def test_nf_layer_size(self):
        self.assertEqual(nf_layer_size(5, 4), 45)
        self.assertEqual(nf_layer_size(1, 0), 5)
        self.assertEqual(nf_layer_size(5, 80), 425)

    @given(st.integers(1, 50), st.integers(0, 100))
    def test_nf_layer_size_is_monotone(self, boxes, classes):
        self.assertLess(nf_layer_size(boxes, classes), nf_layer_size(boxes + 1, classes))
        self.assertLess(nf_layer_size(boxes, classes), nf_layer_size(boxes, classes + 1))


class GridSimTests(SimpleTestCase):
    # six 4 px cars in one 32 px cell, three per 16 px cell
    crowded = [car(x, 0) for x in (0, 5, 10, 17, 22, 27)]

    def test_empty_tile(self):
        self.assertEqual(gridsim_detect(blank_tile(), [], GridSimConfig()), [])

    def test_coarse_grid_drops_one(self):
        detections = gridsim_detect(blank_tile(), self.crowded, GridSimConfig(downsample=32, boxes_per_cell=5))
        self.assertEqual(len(detections), 5)
        self.assertNotIn(BoundingBox(27, 0, 31, 4), [d.box for d in detections])
        self.assertTrue(all(d.confidence == 1.0 for d in detections))

    def test_fine_grid_keeps_all(self):
        detections = gridsim_detect(blank_tile(), self.crowded, GridSimConfig(downsample=16, boxes_per_cell=5))
        self.assertEqual(len(detections), 6)

    def test_capacity_keeps_largest(self):
        truths = [car(0, 0, 4), car(1, 1, 8)]
        (kept,) = gridsim_detect(blank_tile(), truths, GridSimConfig(downsample=32, boxes_per_cell=1))
        self.assertEqual(kept.box, BoundingBox(1, 1, 9, 9))

    @hypothesis_settings(deadline=None)
    @given(
        st.lists(st.tuples(st.integers(0, 120), st.integers(0, 120), st.integers(1, 12)), max_size=60),
        st.sampled_from([8, 16, 32]),
        st.integers(1, 3),
    )
    def test_count_bounded_by_capacity(self, boxes, downsample, per_cell):
        tile = blank_tile(width=128, height=128)
        truths = [car(x, y, side) for x, y, side in boxes]
        visible = truths_in_tile(tile, truths)
        detections = gridsim_detect(tile, truths, GridSimConfig(downsample, per_cell))
        gw, gh = grid_dims(128, downsample)
        self.assertLessEqual(len(detections), min(len(visible), gw * gh * per_cell))

    def test_pairs_merge_on_coarse_grid(self):
        rng = np.random.default_rng(7)
        truths = []
        for by in range(6):
            for bx in range(6):
                separation = int(rng.integers(8, 25))
                x, y = bx * 64 + 4, by * 64 + 4
                truths.extend([car(x, y), car(x + separation, y)])
        tile = blank_tile()
        fine = gridsim_detect(tile, truths, GridSimConfig(downsample=16, boxes_per_cell=1))
        coarse = gridsim_detect(tile, truths, GridSimConfig(downsample=32, boxes_per_cell=1))
        self.assertEqual(len(coarse), 36)
        self.assertGreater(len(fine) / len(truths), len(coarse) / len(truths))

    def test_detector_uses_config(self):
        detector = GridSimDetector(truths=tuple(self.crowded), config=GridSimConfig(downsample=32, boxes_per_cell=5))
        self.assertEqual(len(detector.detect(blank_tile(), ClassTable.from_settings())), 5)


PASS_THROUGH = textwrap.dedent('''
    import csv, sys
    manifest, output = sys.argv[1], sys.argv[2]
    with open(manifest) as src, open(output, 'w', newline='') as dst:
        writer = csv.writer(dst)
        writer.writerow(['cutout_name', 'class_name', 'xmin', 'ymin', 'xmax', 'ymax', 'confidence'])
        for line in src:
            name = line.split('\\t')[0]
            writer.writerow([name, 'car', 1, 2, 11, 12, CONFIDENCE])
''')

EMPTY = textwrap.dedent('''
    import sys
    open(sys.argv[2], 'w').close()
''')

FAILING = textwrap.dedent('''
    import sys
    sys.stderr.write('model weights missing')
    sys.exit(3)
''')


class ExternalDetectorTests(SimpleTestCase):
    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.dir = Path(self.tmp.name)
        self.table = ClassTable.from_settings()
        image_tiles = [blank_tile(row=0, col=col, parent_width=800) for col in (0, 384)]
        write_cutouts(image_tiles, self.dir)
        self.manifest = write_manifest(image_tiles, self.dir / 'manifest.tsv')
        self.tiles = image_tiles

    def tearDown(self):
        self.tmp.cleanup()

    def command(self, source):
        script = self.dir / 'model.py'
        script.write_text(source)
        return f"{shlex.quote(sys.executable)} {shlex.quote(str(script))} {{manifest}} {{output}}"

    def test_empty_output_means_empty_tiles(self):
        result = external_detect(self.manifest, self.dir, self.command(EMPTY), self.table)
        self.assertEqual(result, {tile.name: [] for tile in self.tiles})

    def test_one_row_per_tile_passes_through(self):
        command = self.command(PASS_THROUGH.replace('CONFIDENCE', '0.8'))
        result = external_detect(self.manifest, self.dir, command, self.table)
        for tile in self.tiles:
            (detection,) = result[tile.name]
            self.assertEqual(detection.box, BoundingBox(1, 2, 11, 12))
            self.assertEqual(detection.confidence, 0.8)
            self.assertEqual(detection.tile_id, tile.name)

    def test_confidence_is_clamped_with_warning(self):
        command = self.command(PASS_THROUGH.replace('CONFIDENCE', '1.7'))
        with self.assertLogs('apps.core.geometry', level='WARNING'):
            result = external_detect(self.manifest, self.dir, command, self.table)
        self.assertEqual(result[self.tiles[0].name][0].confidence, 1.0)

    def test_failing_program(self):
        with self.assertLogs('apps.detectors.external', level='ERROR'):
            with self.assertRaisesMessage(DetectorProcessError, 'model weights missing'):
                external_detect(self.manifest, self.dir, self.command(FAILING), self.table)

    def test_missing_program(self):
        with self.assertLogs('apps.detectors.external', level='ERROR'):
            with self.assertRaises(DetectorProcessError):
                external_detect(self.manifest, self.dir, 'no-such-detector-binary {manifest}', self.table)

    def test_batch_detector_stages_its_own_files(self):
        workdir = self.dir / 'work'
        detector = ExternalProcessDetector(self.command(PASS_THROUGH.replace('CONFIDENCE', '0.5')), workdir)
        result = detector.detect_batch(self.tiles, self.table)
        self.assertEqual([len(d) for d in result.per_tile], [1, 1])
        self.assertTrue((workdir / 'manifest.tsv').is_file())
        self.assertGreater(result.detector_seconds, 0.0)


class DetectionFileTests(SimpleTestCase):
    extents = {'scene|0_0_416_416.png': (416, 416)}

    def setUp(self):
        self.table = ClassTable.from_settings()

    def test_header_is_optional_and_corners_are_ordered(self):
        text = 'scene|0_0_416_416.png,boat,30,40,10,20,0.4\n'
        (detection,) = parse_detection_text(text, self.extents, self.table)['scene|0_0_416_416.png']
        self.assertEqual(detection.box, BoundingBox(10, 20, 30, 40))
        self.assertEqual(detection.class_id, 1)

    def test_boxes_are_clamped_to_tile(self):
        text = 'scene|0_0_416_416.png,car,-5,400,20,430,0.4\n'
        (detection,) = parse_detection_text(text, self.extents, self.table)['scene|0_0_416_416.png']
        self.assertEqual(detection.box, BoundingBox(0, 400, 20, 416))

    def test_wrong_field_count_names_line(self):
        text = 'cutout_name,class_name,xmin,ymin,xmax,ymax,confidence\nscene|0_0_416_416.png,car,1,2,3\n'
        with self.assertRaisesMessage(DetectionParseError, ':2:'):
            parse_detection_text(text, self.extents, self.table)

    def test_unknown_cutout(self):
        with self.assertRaises(UnknownCutoutError):
            parse_detection_text('other|0_0_416_416.png,car,1,2,3,4,0.5\n', self.extents, self.table)

    def test_unknown_class(self):
        with self.assertRaises(DetectionParseError):
            parse_detection_text('scene|0_0_416_416.png,tank,1,2,3,4,0.5\n', self.extents, self.table)

    def test_not_a_number(self):
        with self.assertRaises(DetectionParseError):
            parse_detection_text('scene|0_0_416_416.png,car,1,2,3,4,nan\n', self.extents, self.table)


class HttpDetectorTests(SimpleTestCase):
    def setUp(self):
        self.table = ClassTable.from_settings()
        self.tile = blank_tile()

    @mock.patch('apps.detectors.external.requests.post')
    def test_posts_png_and_parses_reply(self, post):
        post.return_value = mock.Mock(text=f"{self.tile.name},airplane,5,5,50,50,0.9\n")
        post.return_value.raise_for_status.return_value = None
        (detection,) = HttpDetector('http://model.local/detect', timeout=5).detect(self.tile, self.table)
        self.assertEqual(detection.class_id, 2)
        _, kwargs = post.call_args
        self.assertEqual(kwargs['data'], {'cutout_name': self.tile.name})
        self.assertEqual(kwargs['files']['image'][2], 'image/png')
        self.assertEqual(kwargs['timeout'], 5)

    @mock.patch('apps.detectors.external.requests.post')
    def test_connection_failure(self, post):
        post.side_effect = requests.ConnectionError('refused')
        with self.assertLogs('apps.detectors.external', level='ERROR'):
            with self.assertRaises(DetectorProcessError):
                HttpDetector('http://model.local/detect').detect(self.tile, self.table)


class RegistryTests(SimpleTestCase):
    def test_oracle_binding(self):
        detector = build_detector({'type': 'oracle', 'fp_rate': 0.5, 'seed': 2}, truths=[car(0, 0)], seed=9)
        self.assertIsInstance(detector, OracleDetector)
        self.assertEqual(detector.noise.seed, 9)
        self.assertEqual(detector.noise.fp_rate, 0.5)

    def test_gridsim_defaults_from_settings(self):
        detector = build_detector({'type': 'gridsim'})
        self.assertEqual(detector.config, GridSimConfig(16, 5))

    def test_unknown_type(self):
        with self.assertRaises(InvalidConfigError):
            build_detector({'type': 'magic'})

    def test_missing_command(self):
        with self.assertRaises(InvalidConfigError):
            build_detector({'type': 'external', 'workdir': '/tmp'})

    def test_invalid_noise(self):
        with self.assertRaises(InvalidConfigError):
            build_detector({'type': 'oracle', 'dropout_prob': 2})


class TilingIntegrationTests(SimpleTestCase):
    def test_noiseless_oracle_sees_every_car_somewhere(self):
        image = RasterImage('scene', np.zeros((1000, 1000), dtype=np.uint8), 0.3)
        truths = tuple(lattice_cars(900, spacing=33, side=10, per_row=30))
        image_tiles = extract_tiles(image, TileSpec(416, 0.15))
        detector = OracleDetector(truths=truths)
        seen = set()
        for tile in image_tiles:
            for d in detector.detect(tile, ClassTable.from_settings()):
                if d.box.area == 100:
                    seen.add((d.box.xmin + tile.col, d.box.ymin + tile.row))
        self.assertEqual(seen, {(t.box.xmin, t.box.ymin) for t in truths})
