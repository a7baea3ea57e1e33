import tempfile
from pathlib import Path

import numpy as np
from django.test import SimpleTestCase
from hypothesis import given
from hypothesis import settings as hypothesis_settings
from hypothesis import strategies as st

from apps.core.exceptions import FrameMismatchError, InvalidInputError, MixedParentError
from apps.core.geometry import iou
from apps.core.types import BoundingBox, ClassTable, Detection, Frame
from apps.tiling.services import TileRecord

from .services import format_detections, global_nms, globalize, read_detections, stitch, write_detections


def make_tile(row, col, size=416, parent=1000, scale=1, name='scene'):
    side = size // scale
    return TileRecord(
        parent_name=name, row=row, col=col, height=side, width=side,
        pixels=np.zeros((side, side), dtype=np.uint8),
        parent_width=parent, parent_height=parent, scale=scale,
    )


def local(tile, box, confidence=0.9, class_id=0):
    return Detection(class_id, BoundingBox(*box), confidence, frame=Frame.TILE_LOCAL, tile_id=tile.tile_id)


def brute_force_nms(dets, threshold):
    kept = []
    for class_id in sorted({d.class_id for d in dets}):
        candidates = sorted(
            (d for d in dets if d.class_id == class_id),
            key=lambda d: (-d.confidence, -d.box.area, d.box.as_tuple()),
        )
        survivors = []
        for candidate in candidates:
            if all(iou(candidate.box, other.box) <= threshold for other in survivors):
                survivors.append(candidate)
        kept.extend(survivors)
    return kept


@st.composite
def detections(draw):
    x0 = draw(st.integers(0, 60))
    y0 = draw(st.integers(0, 60))
    w = draw(st.integers(0, 25))
    h = draw(st.integers(0, 25))
    return Detection(
        class_id=draw(st.integers(0, 2)),
        box=BoundingBox(x0, y0, x0 + w, y0 + h),
        confidence=draw(st.sampled_from([0.1, 0.3, 0.5, 0.5, 0.7, 0.9, 1.0])),
    )


class GlobalizeTests(SimpleTestCase):
    def test_offsets_are_added(self):
        tile = make_tile(353, 0)
        (d,) = globalize([local(tile, (10, 10, 20, 20))], tile)
        self.assertEqual(d.box, BoundingBox(10, 363, 20, 373))
        self.assertIs(d.frame, Frame.GLOBAL)
        self.assertEqual(d.tile_id, tile.tile_id)

    def test_upsampled_tile_is_scaled_back(self):
        tile = make_tile(0, 584, scale=2)
        (d,) = globalize([local(tile, (20, 40, 40, 60))], tile)
        self.assertEqual(d.box, BoundingBox(594, 20, 604, 30))

    def test_boxes_are_clamped_to_parent(self):
        tile = make_tile(584, 584)
        (d,) = globalize([local(tile, (410, 410, 420, 420))], tile)
        self.assertEqual(d.box, BoundingBox(994, 994, 1000, 1000))

    def test_global_input_is_rejected(self):
        tile = make_tile(0, 0)
        with self.assertRaises(FrameMismatchError):
            globalize([Detection(0, BoundingBox(0, 0, 5, 5), 0.5)], tile)

    def test_foreign_tile_is_rejected(self):
        source, other = make_tile(0, 0), make_tile(0, 353)
        with self.assertRaises(FrameMismatchError):
            globalize([local(source, (0, 0, 5, 5))], other)


class NmsTests(SimpleTestCase):
    def test_empty(self):
        self.assertEqual(global_nms([]), [])

    def test_duplicate_keeps_most_confident(self):
        kept = global_nms([
            Detection(0, BoundingBox(0, 0, 10, 10), 0.8),
            Detection(0, BoundingBox(1, 0, 11, 10), 0.9),
        ])
        self.assertEqual([d.confidence for d in kept], [0.9])

    def test_classes_do_not_suppress_each_other(self):
        kept = global_nms([
            Detection(0, BoundingBox(0, 0, 10, 10), 0.8),
            Detection(1, BoundingBox(0, 0, 10, 10), 0.9),
        ])
        self.assertEqual(len(kept), 2)

    def test_whole_box_beats_clipped_copy_at_equal_confidence(self):
        (kept,) = global_nms([
            Detection(0, BoundingBox(406, 0, 416, 10), 1.0),
            Detection(0, BoundingBox(406, 0, 414, 10), 1.0),
        ])
        self.assertEqual(kept.box, BoundingBox(406, 0, 416, 10))

    def test_overlap_at_threshold_survives(self):
        kept = global_nms([
            Detection(0, BoundingBox(0, 0, 10, 10), 0.9),
            Detection(0, BoundingBox(0, 0, 10, 5), 0.8),
        ], nms_iou=0.5)
        self.assertEqual(len(kept), 2)

    def test_tile_local_input_is_rejected(self):
        tile = make_tile(0, 0)
        with self.assertRaises(FrameMismatchError):
            global_nms([local(tile, (0, 0, 5, 5))])

    def test_threshold_range(self):
        with self.assertRaises(InvalidInputError):
            global_nms([], nms_iou=0.0)

    def test_output_order_is_canonical(self):
        dets = [
            Detection(1, BoundingBox(50, 50, 60, 60), 0.2),
            Detection(0, BoundingBox(0, 0, 10, 10), 0.4),
            Detection(0, BoundingBox(30, 30, 40, 40), 0.9),
        ]
        self.assertEqual(global_nms(dets), sorted(dets, key=Detection.sort_key))

    @hypothesis_settings(max_examples=500, deadline=None)
    @given(st.lists(detections(), max_size=200), st.sampled_from([0.3, 0.5, 0.7]))
    def test_matches_brute_force(self, dets, threshold):
        expected = sorted(brute_force_nms(dets, threshold), key=Detection.sort_key)
        self.assertEqual(global_nms(dets, threshold), expected)

    @given(st.lists(detections(), max_size=60))
    def test_idempotent(self, dets):
        once = global_nms(dets)
        self.assertEqual(global_nms(once), once)


class StitchTests(SimpleTestCase):
    def test_straddling_object_is_reported_once(self):
        left, right = make_tile(0, 0), make_tile(0, 353)
        # car spans x 360..370, fully inside both tiles
        per_tile = [
            (left, [local(left, (360, 100, 370, 110), 0.9)]),
            (right, [local(right, (7, 100, 17, 110), 0.8)]),
        ]
        result = stitch(per_tile)
        self.assertEqual(len(result), 1)
        (d,) = result
        self.assertEqual(d.box, BoundingBox(360, 100, 370, 110))
        self.assertEqual(d.confidence, 0.9)
        self.assertEqual((result.parent_name, result.width, result.height), ('scene', 1000, 1000))

    def test_clipped_duplicate_is_suppressed(self):
        left, right = make_tile(0, 0), make_tile(0, 353)
        per_tile = [
            (left, [local(left, (406, 0, 416, 10), 0.9)]),
            (right, [local(right, (53, 0, 61, 10), 0.7)]),
        ]
        self.assertEqual(len(stitch(per_tile)), 1)

    @hypothesis_settings(max_examples=200, deadline=None)
    @given(st.data())
    def test_tile_order_does_not_matter(self, data):
        tiles = [make_tile(row, col) for row in (0, 353) for col in (0, 353)]
        per_tile = []
        for tile in tiles:
            boxes = data.draw(st.lists(
                st.tuples(st.integers(0, 400), st.integers(0, 400), st.integers(1, 16), st.integers(1, 16)),
                max_size=8,
            ))
            confidences = st.sampled_from([0.5, 0.7, 0.9])
            per_tile.append((tile, [
                local(tile, (x, y, x + w, y + h), data.draw(confidences), data.draw(st.integers(0, 1)))
                for x, y, w, h in boxes
            ]))
        shuffled = [(tile, data.draw(st.permutations(dets))) for tile, dets in data.draw(st.permutations(per_tile))]
        self.assertEqual(stitch(shuffled), stitch(per_tile))

    def test_nothing_to_stitch(self):
        with self.assertRaises(InvalidInputError):
            stitch([])

    def test_mixed_parents(self):
        a, b = make_tile(0, 0, name='a'), make_tile(0, 0, name='b')
        with self.assertRaises(MixedParentError):
            stitch([(a, []), (b, [])])


class DetectionFileTests(SimpleTestCase):
    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.dir = Path(self.tmp.name)
        self.table = ClassTable.from_settings()

    def tearDown(self):
        self.tmp.cleanup()

    def test_file_reloads_with_full_precision(self):
        tile = make_tile(0, 0)
        result = stitch([(tile, [local(tile, (1 / 3, 2.5, 10.25, 12), 0.123456789, class_id=2)])])
        path = write_detections(result, self.table, self.dir / 'out.csv')
        lines = path.read_text().splitlines()
        self.assertEqual(lines[0], 'parent_name,class_name,xmin,ymin,xmax,ymax,confidence')
        self.assertTrue(lines[1].startswith('scene,airplane,0.3333333333333333,'))
        (d,) = read_detections(path, self.table)['scene']
        self.assertEqual(d.box, result.detections[0].box)
        self.assertEqual(d.confidence, 0.123456789)

    def test_format_is_stable(self):
        tile = make_tile(0, 0)
        result = stitch([(tile, [local(tile, (0, 0, 4, 4))])])
        self.assertEqual(format_detections(result, self.table), format_detections(result, self.table))
