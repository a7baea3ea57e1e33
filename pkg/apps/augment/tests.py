import tempfile
from pathlib import Path

import numpy as np
from django.test import SimpleTestCase
from hypothesis import given
from hypothesis import strategies as st

from apps.core.exceptions import (
    BandCountError,
    DetectionParseError,
    ImageTooSmallError,
    InvalidInputError,
    NonSquareChipError,
)
from apps.core.types import BoundingBox, ClassTable, GroundTruthLabel, RasterImage
from apps.tiling.services import validate_parent_name

from .services import (
    AugmentSpec,
    LabeledChip,
    augment_chip,
    centroid_to_box,
    chip_window_px,
    cut_training_chips,
    degrade_resolution,
    hsv_jitter,
    load_chip,
    read_label_file,
    read_training_list,
    rotate_box,
    rotate_chip,
    save_chip,
    write_training_list,
)


def gray(size=100, value=0, bands=1, gsd=0.3, name='chip'):
    shape = (size, size) if bands == 1 else (size, size, 3)
    return RasterImage(name, np.full(shape, value, dtype=np.uint8), gsd)


def colorful(size=64, seed=0):
    rng = np.random.default_rng(seed)
    return RasterImage('chip', rng.integers(0, 256, size=(size, size, 3), dtype=np.uint8), 0.3)


def label(box, class_id=0):
    return GroundTruthLabel(class_id, BoundingBox(*box))


class RotationTests(SimpleTestCase):
    def test_zero_angle_is_identity(self):
        chip = LabeledChip(gray(), (label((10, 20, 30, 40)),))
        self.assertIs(rotate_chip(chip, 0), chip)
        self.assertIs(rotate_chip(chip, 360), chip)

    def test_quarter_turn_box(self):
        # x' = y, y' = 100 - x about the chip centre
        self.assertEqual(rotate_box(BoundingBox(10, 20, 30, 40), 100, 90), BoundingBox(20, 70, 40, 90))

    def test_half_turn_reflects_through_centre(self):
        self.assertEqual(rotate_box(BoundingBox(10, 20, 30, 40), 100, 180), BoundingBox(70, 60, 90, 80))

    def test_pixels_follow_labels(self):
        pixels = np.zeros((100, 100), dtype=np.uint8)
        pixels[10:20, 70:80] = 255
        chip = LabeledChip(RasterImage('chip', pixels, 0.3), (label((70, 10, 80, 20)),))
        rotated = rotate_chip(chip, 90)
        (moved,) = rotated.labels
        self.assertEqual(moved.box, BoundingBox(10, 20, 20, 30))
        rows, cols = np.nonzero(rotated.image.pixels > 127)
        self.assertAlmostEqual(cols.mean() + 0.5, 15, delta=1)
        self.assertAlmostEqual(rows.mean() + 0.5, 25, delta=1)

    def test_non_square(self):
        image = RasterImage('chip', np.zeros((10, 12), dtype=np.uint8), 0.3)
        with self.assertRaises(NonSquareChipError):
            rotate_chip(LabeledChip(image, ()), 45)

    def test_corner_label_rotated_off_chip_is_dropped(self):
        chip = LabeledChip(gray(), (label((0, 0, 5, 5)), label((40, 40, 60, 60))))
        with self.assertLogs('apps.augment.services', level='WARNING'):
            rotated = rotate_chip(chip, 45)
        self.assertEqual(len(rotated.labels), 1)

    @given(st.integers(30, 60), st.integers(30, 60), st.integers(1, 10), st.integers(1, 10),
           st.floats(-180, 180, allow_nan=False))
    def test_round_trip_contains_original(self, x, y, w, h, angle):
        box = BoundingBox(x, y, x + w, y + h)
        back = rotate_box(rotate_box(box, 100, angle), 100, -angle)
        self.assertLessEqual(back.xmin, box.xmin + 1e-9)
        self.assertLessEqual(back.ymin, box.ymin + 1e-9)
        self.assertGreaterEqual(back.xmax, box.xmax - 1e-9)
        self.assertGreaterEqual(back.ymax, box.ymax - 1e-9)

    @given(st.sampled_from([90, 180, 270, -90]))
    def test_right_angles_preserve_box_size(self, angle):
        box = BoundingBox(12, 30, 40, 45)
        rotated = rotate_box(box, 100, angle)
        self.assertEqual(sorted((rotated.width, rotated.height)), sorted((box.width, box.height)))


class HsvTests(SimpleTestCase):
    def test_unit_ranges_round_trip(self):
        image = colorful()
        jittered = hsv_jitter(image, AugmentSpec())
        diff = np.abs(jittered.pixels.astype(int) - image.pixels.astype(int))
        self.assertLessEqual(diff.max(), 1)

    def test_value_halving_on_gray(self):
        spec = AugmentSpec(hsv_scale_ranges=((1.0, 1.0), (1.0, 1.0), (0.5, 0.5)))
        result = hsv_jitter(gray(value=200, bands=3), spec)
        self.assertTrue(np.all(np.abs(result.pixels.astype(int) - 100) <= 1))
        self.assertEqual(result.gsd, 0.3)

    def test_same_seed_same_output(self):
        spec = AugmentSpec(hsv_scale_ranges=((0.8, 1.2), (0.5, 1.5), (0.7, 1.3)), seed=4)
        image = colorful(seed=2)
        np.testing.assert_array_equal(hsv_jitter(image, spec).pixels, hsv_jitter(image, spec).pixels)

    def test_single_band(self):
        with self.assertRaises(BandCountError):
            hsv_jitter(gray(), AugmentSpec())

    def test_spec_validation(self):
        with self.assertRaises(InvalidInputError):
            AugmentSpec(rotation_angles=())
        with self.assertRaises(InvalidInputError):
            AugmentSpec(hsv_scale_ranges=((1.2, 0.8), (1, 1), (1, 1)))


class DegradeTests(SimpleTestCase):
    def test_halves_size_and_doubles_gsd(self):
        result = degrade_resolution(gray(100, 90, gsd=0.15))
        self.assertEqual((result.width, result.height), (50, 50))
        self.assertAlmostEqual(result.gsd, 0.30, places=12)

    def test_constant_stays_constant(self):
        result = degrade_resolution(gray(64, 77, bands=3))
        self.assertTrue(np.all(result.pixels == 77))

    def test_mean_is_preserved(self):
        image = colorful(100, seed=5)
        result = degrade_resolution(image)
        self.assertLessEqual(abs(result.pixels.mean() - image.pixels.mean()), 1.0)

    def test_odd_sizes_floor(self):
        image = RasterImage('odd', np.zeros((99, 101), dtype=np.uint8), 0.15)
        self.assertEqual(degrade_resolution(image).pixels.shape, (49, 50))

    def test_too_small(self):
        with self.assertRaises(ImageTooSmallError):
            degrade_resolution(RasterImage('thin', np.zeros((1, 10), dtype=np.uint8), 0.15))


class LabelGeometryTests(SimpleTestCase):
    def test_centroid_to_box(self):
        box = centroid_to_box(50, 50, 3.0, 0.30)
        for got, want in zip(box.as_tuple(), (45, 45, 55, 55)):
            self.assertAlmostEqual(got, want, places=9)
        self.assertEqual(centroid_to_box(0, 0, 2.0, 1.0), BoundingBox(-1, -1, 1, 1))
        self.assertAlmostEqual(centroid_to_box(50, 50, 3.0, 0.15).width, 20, places=9)

    def test_chip_window(self):
        self.assertEqual(chip_window_px(125, 0.3), 417)
        self.assertEqual(chip_window_px(124.8, 0.3), 416)
        with self.assertRaises(InvalidInputError):
            chip_window_px(0.1, 0.3)


class ChipCuttingTests(SimpleTestCase):
    def setUp(self):
        self.image = RasterImage('scene', np.zeros((1000, 1000), dtype=np.uint8), 0.3)

    def test_no_labels_no_chips(self):
        self.assertEqual(cut_training_chips(self.image, [], 125), [])

    def test_empty_fraction_one_keeps_every_chip(self):
        self.assertEqual(len(cut_training_chips(self.image, [], 124.8, empty_fraction=1.0)), 9)

    def test_labels_are_contained(self):
        labels = [label((x, y, x + 10, y + 10)) for x in range(5, 990, 97) for y in range(5, 990, 89)]
        chips = cut_training_chips(self.image, labels, 124.8)
        self.assertTrue(chips)
        for chip in chips:
            self.assertEqual(chip.image.width, 416)
            for item in chip.labels:
                self.assertGreaterEqual(item.box.xmin, 0)
                self.assertLessEqual(item.box.xmax, chip.image.width)
                self.assertLessEqual(item.box.ymax, chip.image.height)

    def test_chip_names_are_valid_parent_names(self):
        chips = cut_training_chips(self.image, [], 124.8, empty_fraction=1.0)
        names = [chip.image.name for chip in chips]
        self.assertEqual(len(set(names)), len(names))
        for name in names:
            self.assertNotIn('|', name)
            validate_parent_name(name)
            self.assertTrue(name.startswith('scene_'))

    def test_outside_label_is_rejected(self):
        with self.assertRaises(InvalidInputError):
            LabeledChip(gray(10), (label((5, 5, 11, 9)),))


class AugmentChipTests(SimpleTestCase):
    def test_one_output_per_angle(self):
        chip = LabeledChip(colorful(64), (label((20, 20, 30, 30)),))
        spec = AugmentSpec(rotation_angles=tuple(range(0, 360, 45)), hsv_scale_ranges=((0.9, 1.1),) * 3, seed=3)
        outputs = augment_chip(chip, spec, index=7)
        self.assertEqual(len(outputs), 8)
        for output in outputs:
            self.assertEqual(len(output.labels), 1)
        again = augment_chip(chip, spec, index=7)
        for a, b in zip(outputs, again):
            np.testing.assert_array_equal(a.image.pixels, b.image.pixels)

    def test_identity_spec(self):
        chip = LabeledChip(colorful(32), (label((2, 2, 8, 8)),))
        (output,) = augment_chip(chip, AugmentSpec())
        self.assertEqual(output.labels, chip.labels)
        self.assertLessEqual(np.abs(output.image.pixels.astype(int) - chip.image.pixels.astype(int)).max(), 1)


class LabelFileTests(SimpleTestCase):
    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.dir = Path(self.tmp.name)
        self.table = ClassTable.from_settings()

    def tearDown(self):
        self.tmp.cleanup()

    def test_saved_chip_reloads(self):
        chip = LabeledChip(colorful(32), (label((2.5, 2, 8, 8), class_id=1),))
        image_name, label_name = save_chip(chip, 'chip_0001', self.dir, self.table)
        self.assertEqual((self.dir / label_name).read_text(), 'boat,2.5,2.0,8.0,8.0\n')
        loaded = load_chip(self.dir / image_name, self.dir / label_name, self.table)
        self.assertEqual(loaded.labels, chip.labels)
        np.testing.assert_array_equal(loaded.image.pixels, chip.image.pixels)

    def test_training_list_paths_are_relative_to_list(self):
        path = write_training_list([('a.png', 'a.txt'), ('b.png', 'b.txt')], self.dir / 'lists' / 'train.txt')
        entries = read_training_list(path)
        self.assertEqual(entries[1], (self.dir / 'lists' / 'b.png', self.dir / 'lists' / 'b.txt'))

    def test_bad_label_line(self):
        path = self.dir / 'bad.txt'
        path.write_text('car,1,2,3\n')
        with self.assertRaisesMessage(DetectionParseError, ':1:'):
            read_label_file(path, self.table)
