import json
import tempfile
from pathlib import Path

import numpy as np
from django.test import SimpleTestCase
from hypothesis import given
from hypothesis import settings as hypothesis_settings
from hypothesis import strategies as st

from .exceptions import InvalidInputError, MissingGsdError, PipelineError, UnknownCutoutError, UnreadableImageError
from .geometry import box_area_m2, clamp_box, clamp_confidence, iou, iou_against, boxes_to_array, intersect_box
from .imaging import read_raster, sidecar_path, write_raster
from .types import BoundingBox, ClassTable, Detection, Frame, RasterImage


@st.composite
def grid_boxes(draw, extent=20):
    x0, x1 = sorted(draw(st.integers(0, extent)) for _ in range(2))
    y0, y1 = sorted(draw(st.integers(0, extent)) for _ in range(2))
    return BoundingBox(float(x0), float(y0), float(x1), float(y1))


def cell_count_iou(a, b, extent=20):
    def mask(box):
        grid = np.zeros((extent, extent), dtype=bool)
        grid[int(box.ymin):int(box.ymax), int(box.xmin):int(box.xmax)] = True
        return grid

    ma, mb = mask(a), mask(b)
    union = np.logical_or(ma, mb).sum()
    return 0.0 if union == 0 else np.logical_and(ma, mb).sum() / union


class IouTests(SimpleTestCase):
    def test_examples(self):
        a = BoundingBox(0, 0, 10, 10)
        self.assertEqual(iou(a, BoundingBox(0, 0, 10, 10)), 1.0)
        self.assertEqual(iou(a, BoundingBox(20, 20, 30, 30)), 0.0)
        self.assertAlmostEqual(iou(a, BoundingBox(5, 0, 15, 10)), 1 / 3, places=12)

    def test_degenerate_boxes_score_zero(self):
        point = BoundingBox(3, 3, 3, 3)
        self.assertEqual(iou(point, point), 0.0)

    @given(grid_boxes(), grid_boxes())
    def test_symmetric(self, a, b):
        self.assertEqual(iou(a, b), iou(b, a))

    @given(grid_boxes())
    def test_self_overlap_is_one(self, a):
        if a.area > 0:
            self.assertEqual(iou(a, a), 1.0)

    @given(grid_boxes(), grid_boxes(), st.integers(-1000, 1000), st.integers(-1000, 1000))
    def test_translation_invariant(self, a, b, dx, dy):
        shift = lambda box: BoundingBox(box.xmin + dx, box.ymin + dy, box.xmax + dx, box.ymax + dy)  # noqa: E731
        self.assertEqual(iou(shift(a), shift(b)), iou(a, b))

    @hypothesis_settings(max_examples=300)
    @given(grid_boxes(), grid_boxes())
    def test_matches_cell_counting(self, a, b):
        self.assertLess(abs(iou(a, b) - cell_count_iou(a, b)), 1e-12)

    @given(grid_boxes(), st.lists(grid_boxes(), max_size=10))
    def test_vectorised_agrees_exactly(self, box, others):
        expected = [iou(box, other) for other in others]
        self.assertEqual(iou_against(box, boxes_to_array(others)).tolist(), expected)


class BoxHelperTests(SimpleTestCase):
    def test_clamp_box(self):
        self.assertEqual(clamp_box(BoundingBox(5, 5, 10, 10), 100, 100), BoundingBox(5, 5, 10, 10))
        self.assertEqual(clamp_box(BoundingBox(-3, -3, 10, 10), 100, 100), BoundingBox(0, 0, 10, 10))
        self.assertEqual(clamp_box(BoundingBox(90, 90, 120, 130), 100, 100), BoundingBox(90, 90, 100, 100))

    def test_box_area_m2(self):
        self.assertAlmostEqual(box_area_m2(BoundingBox(0, 0, 10, 10), 0.3), 9.0, places=9)
        self.assertEqual(box_area_m2(BoundingBox(4, 4, 4, 9), 0.3), 0.0)
        self.assertAlmostEqual(box_area_m2(BoundingBox(0, 0, 416, 416), 0.3), 15575.04, places=6)

    def test_intersect_box(self):
        self.assertEqual(intersect_box(BoundingBox(0, 0, 10, 10), BoundingBox(5, 5, 20, 20)), BoundingBox(5, 5, 10, 10))
        self.assertIsNone(intersect_box(BoundingBox(0, 0, 10, 10), BoundingBox(10, 0, 20, 10)))

    def test_clamp_confidence_warns(self):
        with self.assertLogs('apps.core.geometry', level='WARNING'):
            self.assertEqual(clamp_confidence(1.7), 1.0)
        self.assertEqual(clamp_confidence(0.4), 0.4)


class TypeTests(SimpleTestCase):
    def test_box_rejects_reversed_corners(self):
        with self.assertRaises(InvalidInputError):
            BoundingBox(10, 0, 5, 5)

    def test_detection_confidence_range(self):
        with self.assertRaises(InvalidInputError):
            Detection(0, BoundingBox(0, 0, 1, 1), 1.5)

    def test_tile_local_detection_needs_tile(self):
        with self.assertRaises(InvalidInputError):
            Detection(0, BoundingBox(0, 0, 1, 1), 0.5, frame=Frame.TILE_LOCAL)

    def test_class_table_from_settings(self):
        table = ClassTable.from_settings()
        self.assertEqual(table.id_of('car'), 0)
        self.assertEqual(table.name_of(3), 'airport')
        self.assertIn(0, table.small_object_ids)
        self.assertNotIn(1, table.small_object_ids)
        with self.assertRaises(KeyError):
            table.id_of('submarine')

    def test_class_table_rejects_duplicate_names(self):
        with self.assertRaises(InvalidInputError):
            ClassTable.from_records([{'name': 'car'}, {'name': 'car'}])

    def test_raster_image_is_read_only_copy(self):
        pixels = np.zeros((4, 6), dtype=np.uint8)
        image = RasterImage('scene', pixels, 0.3)
        pixels[0, 0] = 9
        self.assertEqual(image.pixels[0, 0], 0)
        self.assertEqual((image.width, image.height, image.bands), (6, 4, 1))
        with self.assertRaises(ValueError):
            image.pixels[0, 0] = 1

    def test_raster_image_validation(self):
        with self.assertRaises(InvalidInputError):
            RasterImage('scene', np.zeros((4, 4), dtype=np.float32), 0.3)
        with self.assertRaises(InvalidInputError):
            RasterImage('scene', np.zeros((4, 4, 2), dtype=np.uint8), 0.3)
        with self.assertRaises(InvalidInputError):
            RasterImage('scene', np.zeros((4, 4), dtype=np.uint8), 0.0)


class RasterIoTests(SimpleTestCase):
    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.dir = Path(self.tmp.name)

    def tearDown(self):
        self.tmp.cleanup()

    def test_round_trip(self):
        pixels = np.arange(60, dtype=np.uint8).reshape(4, 5, 3)
        path = write_raster(RasterImage('tile', pixels, 0.5), self.dir / 'tile.png')
        loaded = read_raster(path)
        self.assertEqual(loaded.name, 'tile')
        self.assertEqual(loaded.gsd, 0.5)
        np.testing.assert_array_equal(loaded.pixels, pixels)

    def test_missing_sidecar(self):
        path = write_raster(RasterImage('tile', np.zeros((3, 3), dtype=np.uint8), 0.5), self.dir / 'a.png',
                            with_sidecar=False)
        with self.assertRaises(MissingGsdError):
            read_raster(path)

    def test_sidecar_without_gsd(self):
        path = write_raster(RasterImage('tile', np.zeros((3, 3), dtype=np.uint8), 0.5), self.dir / 'a.png')
        sidecar_path(path).write_text(json.dumps({'name': 'tile'}))
        with self.assertRaises(MissingGsdError):
            read_raster(path)

    def test_missing_image(self):
        with self.assertRaises(UnreadableImageError):
            read_raster(self.dir / 'nothing.png')


class ErrorTests(SimpleTestCase):
    def test_with_context_keeps_family(self):
        error = MissingGsdError('no sidecar').with_context('profile airports')
        self.assertIsInstance(error, MissingGsdError)
        self.assertEqual(str(error), 'profile airports: no sidecar')
        self.assertEqual(error.exit_code, 8)

    def test_unknown_cutout_message_is_plain(self):
        error = UnknownCutoutError('unknown cutout x')
        self.assertIsInstance(error, PipelineError)
        self.assertEqual(str(error), 'unknown cutout x')
