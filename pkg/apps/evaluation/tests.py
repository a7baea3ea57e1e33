import tempfile
from pathlib import Path

import numpy as np
from django.test import SimpleTestCase
from hypothesis import given
from hypothesis import strategies as st

from apps.core.exceptions import EmptyCurveError, MixedClassError, NoClassesError, NonPositiveTimeError
from apps.core.types import BoundingBox, ClassTable, Detection, GroundTruthLabel
from apps.detectors.oracle import ConfidenceLaw, OracleNoiseModel, oracle_detect
from apps.stitching.services import globalize
from apps.tiling.services import TileRecord

from .reports import format_csv_report, plot_pr_curves, write_csv_report, write_pr_data, write_text_report
from .services import (
    EvalConfig,
    PRPoint,
    average_precision,
    best_f1,
    evaluate,
    f1_score,
    gpus_for_daily_area,
    match_detections,
    mean_ap,
    pr_curve,
    pr_curve_many,
    scene_area_km2,
    throughput,
)

CAR, BOAT = 0, 1


def det(box, confidence=0.9, class_id=CAR):
    return Detection(class_id, BoundingBox(*box), confidence)


def truth(box, class_id=CAR):
    return GroundTruthLabel(class_id, BoundingBox(*box))


class EvalConfigTests(SimpleTestCase):
    def test_protocol_defaults(self):
        cfg = EvalConfig.from_settings(class_table=ClassTable.from_settings())
        self.assertEqual(len(cfg.thresholds), 30)
        self.assertEqual(cfg.thresholds[0], 0.05)
        self.assertEqual(cfg.thresholds[-1], 0.95)
        spacing = np.diff(cfg.thresholds)
        self.assertLess(np.max(np.abs(spacing - 0.9 / 29)), 1e-12)
        self.assertEqual((cfg.iou_default, cfg.iou_small_object), (0.5, 0.25))
        self.assertEqual(cfg.iou_for(CAR), 0.25)
        self.assertEqual(cfg.iou_for(BOAT), 0.5)

    def test_overrides(self):
        cfg = EvalConfig.from_settings(threshold_count=3, threshold_min=0.2, threshold_max=0.8, iou_default=0.7)
        np.testing.assert_allclose(cfg.thresholds, (0.2, 0.5, 0.8), rtol=0, atol=1e-12)
        self.assertEqual(cfg.iou_default, 0.7)


class MatchingTests(SimpleTestCase):
    def test_exact_match(self):
        result = match_detections([det((0, 0, 10, 10))], [truth((0, 0, 10, 10))], 0.5)
        self.assertEqual((result.tp, result.fp, result.fn), (1, 0, 0))

    def test_threshold_decides(self):
        # IoU 3/7
        dets, gts = [det((0, 0, 10, 10))], [truth((4, 0, 14, 10))]
        self.assertEqual(match_detections(dets, gts, 0.25).tp, 1)
        result = match_detections(dets, gts, 0.5)
        self.assertEqual((result.tp, result.fp, result.fn), (0, 1, 1))

    def test_most_confident_claims_truth(self):
        dets = [det((1, 0, 11, 10), 0.6), det((0, 0, 10, 10), 0.8)]
        result = match_detections(dets, [truth((0, 0, 10, 10))], 0.5)
        (pair,) = result.pairs
        self.assertEqual(pair[0].confidence, 0.8)
        self.assertEqual((result.tp, result.fp), (1, 1))

    def test_each_truth_matches_once(self):
        dets = [det((0, 0, 10, 10), 0.9), det((0, 0, 10, 10), 0.8)]
        result = match_detections(dets, [truth((0, 0, 10, 10)), truth((50, 50, 60, 60))], 0.5)
        self.assertEqual((result.tp, result.fp, result.fn), (1, 1, 1))

    def test_mixed_classes(self):
        with self.assertRaises(MixedClassError):
            match_detections([det((0, 0, 1, 1), class_id=BOAT)], [truth((0, 0, 1, 1))], 0.5)

    @given(st.lists(st.tuples(st.integers(0, 50), st.integers(0, 50), st.floats(0.05, 1.0)), max_size=30),
           st.lists(st.tuples(st.integers(0, 50), st.integers(0, 50)), max_size=30))
    def test_counts_are_consistent(self, raw_dets, raw_gts):
        dets = [det((x, y, x + 8, y + 8), c) for x, y, c in raw_dets]
        gts = [truth((x, y, x + 8, y + 8)) for x, y in raw_gts]
        result = match_detections(dets, gts, 0.5)
        self.assertEqual(result.tp + result.fp, len(dets))
        self.assertEqual(result.tp + result.fn, len(gts))
        self.assertEqual(len({id(g) for _, g in result.pairs}), result.tp)


class CurveTests(SimpleTestCase):
    def setUp(self):
        self.cfg = EvalConfig.from_settings(class_table=ClassTable.from_settings())

    def test_empty_scene_scores_perfect(self):
        point = PRPoint.from_counts(0.5, 0, 0, 0)
        self.assertEqual((point.precision, point.recall), (1.0, 1.0))

    def test_perfect_detections(self):
        gts = [truth((i * 20, 0, i * 20 + 10, 10)) for i in range(5)]
        dets = [det(g.box.as_tuple(), 1.0) for g in gts]
        curve = pr_curve(dets, gts, CAR, self.cfg)
        self.assertTrue(all(p.precision == 1.0 and p.recall == 1.0 for p in curve))
        self.assertEqual(average_precision(curve), 1.0)

    def test_low_confidence_detection_drops_out(self):
        curve = pr_curve([det((0, 0, 10, 10), 0.5)], [truth((0, 0, 10, 10))], CAR, self.cfg)
        self.assertEqual(curve[0].tp, 1)
        self.assertEqual(curve[-1].tp, 0)
        self.assertEqual(curve[-1].precision, 1.0)
        self.assertEqual(curve[-1].recall, 0.0)

    def test_envelope_area(self):
        curve = [PRPoint.from_counts(0.9, 1, 0, 1), PRPoint.from_counts(0.1, 2, 2, 0)]
        self.assertEqual(average_precision(curve), 0.75)

    def test_envelope_fills_dips(self):
        curve = [
            PRPoint(0.9, 0, 0, 0, 1.0, 0.25),
            PRPoint(0.5, 0, 0, 0, 0.4, 0.5),
            PRPoint(0.1, 0, 0, 0, 0.8, 1.0),
        ]
        self.assertAlmostEqual(average_precision(curve), 0.25 + 0.25 * 0.8 + 0.5 * 0.8, places=12)

    def test_empty_curve(self):
        with self.assertRaises(EmptyCurveError):
            average_precision([])
        with self.assertRaises(EmptyCurveError):
            best_f1([])

    def test_mean_ap(self):
        self.assertEqual(mean_ap({CAR: 1.0, BOAT: 0.5}), 0.75)
        with self.assertRaises(NoClassesError):
            mean_ap({})

    def test_f1(self):
        self.assertEqual(f1_score(3, 1, 1), 0.75)
        self.assertEqual(f1_score(0, 4, 4), 0.0)

    @given(st.lists(st.tuples(st.integers(0, 60), st.integers(0, 60), st.sampled_from([0.2, 0.45, 0.6, 0.85]))),
           st.lists(st.tuples(st.integers(0, 60), st.integers(0, 60)), max_size=15),
           st.randoms(use_true_random=False))
    def test_detection_order_does_not_change_the_curve(self, raw_dets, raw_gts, rng):
        dets = [det((x, y, x + 8, y + 8), c) for x, y, c in raw_dets]
        gts = [truth((x, y, x + 8, y + 8)) for x, y in raw_gts]
        curve = pr_curve(dets, gts, CAR, self.cfg)
        rng.shuffle(dets)
        rng.shuffle(gts)
        self.assertEqual(pr_curve(dets, gts, CAR, self.cfg), curve)
        by_threshold = sorted(curve, key=lambda p: p.threshold)
        for lower, higher in zip(by_threshold, by_threshold[1:]):
            self.assertLessEqual(higher.recall, lower.recall)
            self.assertLessEqual(higher.tp, lower.tp)

    def test_best_f1_prefers_lowest_threshold_on_ties(self):
        curve = [PRPoint.from_counts(0.2, 2, 0, 0), PRPoint.from_counts(0.4, 2, 0, 0), PRPoint.from_counts(0.6, 1, 0, 1)]
        self.assertEqual(best_f1(curve), (0.2, 1.0))

    def test_analytic_precision_with_one_false_positive_per_three_true(self):
        # 400 single-tile scenes of 10 cars; false positives carry confidence just under 0.7
        noise = OracleNoiseModel(
            fp_rate=10 / 3,
            confidence_law=ConfidenceLaw(tp_range=(0.7, 1.0), fp_range=(0.675, 0.695)),
            seed=21,
        )
        pixels = np.zeros((416, 416), dtype=np.uint8)
        gts = [truth((40 * i + 5, 40 * i + 5, 40 * i + 15, 40 * i + 15)) for i in range(10)]
        scenes = []
        for index in range(400):
            tile = TileRecord(f"scene{index}", 0, 0, 416, 416, pixels, 416, 416)
            scenes.append((globalize(oracle_detect(tile, gts, noise), tile), gts))
        curve = pr_curve_many(scenes, CAR, self.cfg)
        for point in curve:
            with self.subTest(threshold=point.threshold):
                self.assertAlmostEqual(point.precision, point.tp / (point.tp + point.fp), delta=1e-9)
                if point.threshold < 0.675:
                    self.assertAlmostEqual(point.precision, 0.75, delta=0.03)
                    self.assertEqual(point.tp, 4000)
                elif point.threshold >= 0.7:
                    self.assertEqual(point.precision, 1.0)


class ThroughputTests(SimpleTestCase):
    def test_rate_and_overhead(self):
        result = throughput(2.25, 1.5, 3.0)
        self.assertEqual(result.rate_km2_per_s, 1.5)
        self.assertEqual(result.overhead_factor, 2.0)

    def test_non_positive_time(self):
        with self.assertRaises(NonPositiveTimeError):
            throughput(2.25, 0.0, 1.0)

    def test_scene_area(self):
        self.assertAlmostEqual(scene_area_km2(5000, 5000, 0.3), 2.25, places=12)
        self.assertAlmostEqual(scene_area_km2(16000, 16000, 0.3), 23.04, places=12)

    def test_gpus_for_daily_area(self):
        self.assertEqual(gpus_for_daily_area(1_000_000, 0.5), 24)
        self.assertEqual(gpus_for_daily_area(0, 0.5), 0)


class EvaluateTests(SimpleTestCase):
    def setUp(self):
        self.table = ClassTable.from_settings()
        self.cfg = EvalConfig.from_settings(class_table=self.table)
        self.tmp = tempfile.TemporaryDirectory()
        self.dir = Path(self.tmp.name)

    def tearDown(self):
        self.tmp.cleanup()

    def report(self):
        gts = [truth((0, 0, 10, 10)), truth((100, 100, 140, 130), BOAT)]
        dets = [det((0, 0, 10, 10), 0.9), det((100, 100, 140, 130), 0.3, BOAT), det((300, 300, 340, 330), 0.8, BOAT)]
        return evaluate([(dets, gts)], self.table, self.cfg, timing=throughput(2.25, 1.0, 1.5))

    def test_only_classes_in_ground_truth_are_scored(self):
        report = self.report()
        self.assertEqual(sorted(report.average_precisions), [CAR, BOAT])
        self.assertEqual(report.average_precisions[CAR], 1.0)
        self.assertLess(report.average_precisions[BOAT], 1.0)
        self.assertEqual(report.map, sum(report.average_precisions.values()) / 2)
        self.assertEqual(report.overhead_factor, 1.5)

    def test_no_ground_truth(self):
        with self.assertRaises(NoClassesError):
            evaluate([([det((0, 0, 1, 1))], [])], self.table, self.cfg)

    def test_report_files(self):
        report = self.report()
        text = write_text_report(report, self.dir / 'report.txt').read_text()
        self.assertIn('Class car', text)
        self.assertIn('overhead factor 1.500', text)
        rows = write_csv_report(report, self.dir / 'report.csv').read_text().splitlines()
        self.assertEqual(rows[0], 'class,threshold,tp,fp,fn,precision,recall')
        self.assertEqual(rows[-1], f"ALL,{report.map!r}")
        self.assertEqual(len(rows), 1 + 2 * 30 + 1 + 2 + 1)
        paths = write_pr_data(report, self.dir / 'pr_curves')
        self.assertEqual(sorted(p.name for p in paths), ['boat.dat', 'car.dat'])
        self.assertTrue(plot_pr_curves(report, self.dir / 'pr.png').stat().st_size > 0)

    def test_csv_report_is_stable(self):
        self.assertEqual(format_csv_report(self.report()), format_csv_report(self.report()))
