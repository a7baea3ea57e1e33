import numpy as np
from django.test import SimpleTestCase

from apps.core.exceptions import InvalidConfigError, OddWindowError, UpsampleRequiredError
from apps.core.types import BoundingBox, ClassTable, Detection, GroundTruthLabel, RasterImage
from apps.detectors.oracle import OracleDetector
from apps.tiling.services import TileSpec

from .services import (
    EnsembleConfig,
    EnsembleRunner,
    ScaleProfile,
    TilingPlan,
    chip_count_ratio,
    effective_gsd,
    filter_implausible_sizes,
    resample_for_profile,
    run_ensemble,
    simulate_2x,
    single_profile,
)

CAR, BOAT, AIRPLANE, AIRPORT = range(4)


def scene(size=2000, gsd=0.5, name='scene'):
    ys, xs = np.mgrid[0:size, 0:size]
    return RasterImage(name, ((xs + ys) % 251).astype(np.uint8), gsd)


def cars(count=20, side=10):
    # even coordinates survive a 2x downsample exactly
    return [
        GroundTruthLabel(CAR, BoundingBox(x, y, x + side, y + side))
        for x, y in ((40 + (i % 10) * 190, 40 + (i // 10) * 380) for i in range(count))
    ]


class ProfileTests(SimpleTestCase):
    def test_effective_gsd(self):
        profile = ScaleProfile('airports', 1000, 250, {AIRPORT}, detector=None)
        self.assertEqual(effective_gsd(profile), 4.0)

    def test_invalid_window(self):
        with self.assertRaises(InvalidConfigError):
            ScaleProfile('bad', 0, 416, {CAR}, detector=None)
        with self.assertRaises(InvalidConfigError):
            ScaleProfile('bad', 100, 0, {CAR}, detector=None)

    def test_ensemble_validation(self):
        with self.assertRaises(InvalidConfigError):
            EnsembleConfig(profiles=())
        a = ScaleProfile('a', 208, 416, {CAR}, detector=None)
        with self.assertRaises(InvalidConfigError):
            EnsembleConfig(profiles=(a, ScaleProfile('a', 1000, 250, {AIRPORT}, detector=None)))
        with self.assertRaises(InvalidConfigError):
            EnsembleConfig(profiles=(a, ScaleProfile('b', 1000, 250, {CAR, AIRPORT}, detector=None)))

    def test_prediction_grid(self):
        profile = ScaleProfile('vehicles', 124.8, 416, {CAR}, detector=None, downsample=16)
        self.assertEqual(profile.grid, (26, 26))
        self.assertEqual(ScaleProfile('coarse', 124.8, 416, {CAR}, detector=None, downsample=32).grid, (13, 13))
        self.assertIsNone(ScaleProfile('plain', 124.8, 416, {CAR}, detector=None).grid)
        for bad in (0, 2.5):
            with self.assertRaises(InvalidConfigError):
                ScaleProfile('bad', 124.8, 416, {CAR}, detector=None, downsample=bad)

    def test_uncovered_class(self):
        config = EnsembleConfig(profiles=(ScaleProfile('a', 208, 416, {CAR}, detector=None),))
        with self.assertRaises(InvalidConfigError):
            config.check_coverage(ClassTable.from_settings())


class ResampleTests(SimpleTestCase):
    def test_same_resolution_is_untouched(self):
        image = scene(500)
        profile = ScaleProfile('vehicles', 208, 416, {CAR}, detector=None)
        self.assertIs(resample_for_profile(image, profile), image)

    def test_downsampling(self):
        image = scene(1000)
        resampled = resample_for_profile(image, ScaleProfile('airports', 1000, 250, {AIRPORT}, detector=None))
        self.assertEqual((resampled.width, resampled.height), (125, 125))
        self.assertEqual(resampled.gsd, 4.0)
        self.assertEqual(resampled.name, 'scene@airports')

    def test_upsampling_is_refused(self):
        with self.assertRaises(UpsampleRequiredError):
            resample_for_profile(scene(100), ScaleProfile('fine', 104, 416, {CAR}, detector=None))


class PlanningTests(SimpleTestCase):
    def test_simulate_2x_quadruples_tile_count(self):
        image = scene(1664)
        native = TilingPlan(TileSpec(416, 0.15)).tile_count(image)
        doubled = simulate_2x(image, 416, 0.15)
        self.assertEqual(native, 25)
        self.assertEqual(doubled.tile_count(image), 100)
        self.assertLessEqual(abs(doubled.tile_count(image) / native - 4), 4 * 0.15)
        tile = doubled.tiles(image)[0]
        self.assertEqual((tile.width, tile.scale, tile.detector_width), (208, 2, 416))

    def test_odd_window(self):
        with self.assertRaises(OddWindowError):
            simulate_2x(scene(500), 415)

    def test_chip_count_ratio_for_twenty_km(self):
        ratio = chip_count_ratio(20000, 200, 2000, TileSpec(416, 0.15))
        self.assertAlmostEqual(ratio, 144 / 13924, places=12)
        self.assertTrue(0.005 <= ratio <= 0.015)


class SizeFilterTests(SimpleTestCase):
    def test_implausible_boxes_are_dropped(self):
        table = ClassTable.from_settings()
        dets = [
            Detection(CAR, BoundingBox(0, 0, 10, 10), 0.9),
            Detection(CAR, BoundingBox(0, 0, 100, 10), 0.9),
            Detection(AIRPORT, BoundingBox(0, 0, 2000, 1500), 0.9),
            Detection(AIRPORT, BoundingBox(0, 0, 10, 10), 0.9),
        ]
        kept = filter_implausible_sizes(dets, table, 0.3)
        self.assertEqual(kept, [dets[0], dets[2]])


class EnsembleTests(SimpleTestCase):
    def setUp(self):
        self.table = ClassTable.from_settings()
        self.spec = TileSpec(416, 0.15)
        self.airport = GroundTruthLabel(AIRPORT, BoundingBox(400, 400, 1200, 1200))
        self.truths = tuple(cars() + [self.airport])

    def ensemble(self, simulate=False):
        detector = OracleDetector(truths=self.truths)
        return EnsembleConfig(profiles=(
            ScaleProfile('vehicles', 208, 416, {CAR, BOAT, AIRPLANE}, detector, simulate_2x=simulate),
            ScaleProfile('airports', 1000, 250, {AIRPORT}, detector),
        ))

    def test_each_profile_answers_for_its_classes(self):
        runner = EnsembleRunner(self.ensemble(), self.spec, self.table)
        result = runner.run(scene())
        boxes = sorted((d.class_id, d.box.as_tuple()) for d in result)
        expected = sorted((t.class_id, t.box.as_tuple()) for t in self.truths)
        self.assertEqual(boxes, expected)
        profiles = {d.class_id: d.profile for d in result}
        self.assertEqual(profiles, {CAR: 'vehicles', AIRPORT: 'airports'})
        self.assertEqual(runner.timings['tiles'], 36 + 1)

    def test_simulated_2x_profile_recovers_cars(self):
        result = run_ensemble(scene(), self.ensemble(simulate=True), self.spec, self.table)
        found = sorted(d.box.as_tuple() for d in result if d.class_id == CAR)
        self.assertEqual(found, sorted(t.box.as_tuple() for t in cars()))

    def test_profile_errors_name_the_profile(self):
        config = EnsembleConfig(profiles=(
            ScaleProfile('fine', 100, 416, {CAR, BOAT, AIRPLANE, AIRPORT}, OracleDetector()),
        ))
        with self.assertRaisesMessage(UpsampleRequiredError, 'profile fine:'):
            run_ensemble(scene(500), config, self.spec, self.table)

    def test_single_profile_matches_plain_pipeline(self):
        config = single_profile(OracleDetector(truths=tuple(cars())), self.spec, self.table, 0.5)
        (profile,) = config.profiles
        self.assertEqual((profile.window_m, profile.window_px), (208.0, 416))
        self.assertEqual(profile.classes, frozenset(range(4)))
        result = run_ensemble(scene(), config, self.spec, self.table)
        self.assertEqual(len(result), len(cars()))

    def test_grids_are_reported_per_profile(self):
        detector = OracleDetector(truths=self.truths)
        config = EnsembleConfig(profiles=(
            ScaleProfile('vehicles', 208, 416, {CAR, BOAT, AIRPLANE}, detector, downsample=16),
            ScaleProfile('airports', 1000, 250, {AIRPORT}, detector),
        ))
        runner = EnsembleRunner(config, self.spec, self.table)
        runner.run(scene())
        self.assertEqual(runner.timings['grids'], {'vehicles': [26, 26]})

    def test_profile_without_classes_changes_nothing(self):
        baseline = run_ensemble(scene(), self.ensemble(), self.spec, self.table)
        detector = OracleDetector(truths=self.truths)
        config = EnsembleConfig(profiles=self.ensemble().profiles + (
            ScaleProfile('idle', 500, 416, set(), detector),
        ))
        runner = EnsembleRunner(config, self.spec, self.table)
        self.assertEqual(runner.run(scene()), baseline)
        self.assertEqual(runner.timings['tiles'], 36 + 1)
