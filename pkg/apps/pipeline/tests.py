import io
import json
import tempfile
from pathlib import Path

from django.core.management import call_command
from django.core.management.base import CommandError
from django.test import SimpleTestCase

from apps.core.exceptions import InfeasibleSceneError, InvalidConfigError
from apps.core.imaging import read_raster
from apps.core.types import BoundingBox, ClassTable, GroundTruthLabel
from apps.detectors.external import DETECTION_COLUMNS
from apps.tiling.services import TileSpec

from .config import load_augment_spec, load_pipeline_config
from .files import read_ground_truth, write_ground_truth
from .serializers import EnsembleSerializer, ProfileSerializer, RunConfigSerializer, SceneSpecSerializer
from .services import run_pipeline
from .synth import SceneSpec, object_side_px, render_scene, write_scene

CAR = 0


def scene_spec(name='scene', extent_m=300.0, gsd=0.3, cars=50, seed=0, **extra):
    return SceneSpec.from_data({
        'name': name,
        'gsd_m': gsd,
        'extent_m': extent_m,
        'seed': seed,
        'objects': [{'class_name': 'car', 'count': cars, 'size_m': 3.0}],
        **extra,
    })


class PipelineTestCase(SimpleTestCase):
    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.dir = Path(self.tmp.name)
        self.table = ClassTable.from_settings()

    def tearDown(self):
        self.tmp.cleanup()

    def make_scene(self, spec):
        image, labels = render_scene(spec, self.table)
        write_scene(image, labels, self.table, self.dir)
        return labels

    def write_config(self, name='run.json', **data):
        data.setdefault('image', 'scene.png')
        data.setdefault('ground_truth', 'scene_gt.csv')
        data.setdefault('out', 'out')
        if 'ensemble' not in data:
            data.setdefault('detector', {'type': 'oracle'})
        path = self.dir / name
        path.write_text(json.dumps(data), encoding='utf-8')
        return path

    def command(self, name, *args, **options):
        out = io.StringIO()
        call_command(name, *args, stdout=out, stderr=io.StringIO(), **options)
        return out.getvalue()


class SynthTests(PipelineTestCase):
    def test_three_meter_cars_are_ten_pixels(self):
        self.assertEqual(object_side_px(3.0, 0.3), 10.0)
        image, labels = render_scene(scene_spec(cars=100), self.table)
        self.assertEqual((image.width, image.height, image.gsd), (1000, 1000, 0.3))
        self.assertEqual(len(labels), 100)
        for label in labels:
            self.assertEqual((label.box.width, label.box.height), (10.0, 10.0))
            self.assertEqual(label.class_id, CAR)

    def test_same_seed_same_bytes(self):
        first, second = self.dir / 'a', self.dir / 'b'
        for folder in (first, second):
            image, labels = render_scene(scene_spec(seed=5), self.table)
            write_scene(image, labels, self.table, folder)
        for name in ('scene.png', 'scene.json', 'scene_gt.csv'):
            self.assertEqual((first / name).read_bytes(), (second / name).read_bytes())

    def test_different_seeds_move_objects(self):
        _, a = render_scene(scene_spec(seed=1), self.table)
        _, b = render_scene(scene_spec(seed=2), self.table)
        self.assertNotEqual([l.box for l in a], [l.box for l in b])

    def test_objects_do_not_overlap(self):
        _, labels = render_scene(scene_spec(extent_m=60, cars=20), self.table)
        boxes = [l.box for l in labels]
        for i, a in enumerate(boxes):
            for b in boxes[i + 1:]:
                self.assertFalse(a.xmin < b.xmax and b.xmin < a.xmax and a.ymin < b.ymax and b.ymin < a.ymax)

    def test_single_band(self):
        image, _ = render_scene(scene_spec(bands=1, cars=3), self.table)
        self.assertEqual(image.bands, 1)

    def test_demo_objects_fit_inside_the_overlap(self):
        spec = SceneSpec.from_file(Path(__file__).resolve().parents[2] / 'samples' / 'scene.json')
        tiling = TileSpec.from_settings()
        overlap_px = tiling.window - tiling.stride
        for obj in spec.objects:
            self.assertLess(object_side_px(obj.size_m, spec.gsd_m), overlap_px, obj.class_name)

    def test_crowded_scene_is_infeasible(self):
        with self.assertRaises(InfeasibleSceneError):
            render_scene(scene_spec(extent_m=9, cars=5), self.table)

    def test_object_larger_than_scene(self):
        spec = SceneSpec.from_data({
            'name': 'tiny', 'gsd_m': 1.0, 'width_px': 100, 'height_px': 100,
            'objects': [{'class': 'airport', 'count': 1, 'size_m': 500}],
        })
        with self.assertRaises(InfeasibleSceneError):
            render_scene(spec, self.table)

    def test_unknown_class(self):
        spec = SceneSpec.from_data({
            'name': 'x', 'gsd_m': 1.0, 'width_px': 50, 'height_px': 50,
            'objects': [{'class': 'tank', 'count': 1, 'size_m': 5}],
        })
        with self.assertRaises(InvalidConfigError):
            render_scene(spec, self.table)


class GroundTruthFileTests(PipelineTestCase):
    def test_round_trip(self):
        labels = self.make_scene(scene_spec(cars=10))
        self.assertEqual(read_ground_truth(self.dir / 'scene_gt.csv', self.table), labels)
        header = (self.dir / 'scene_gt.csv').read_text().splitlines()[0]
        self.assertEqual(header, 'class_name,xmin,ymin,xmax,ymax')

    def test_written_values_are_floats(self):
        path = write_ground_truth([GroundTruthLabel(1, BoundingBox(1, 2, 3, 4))], self.table, self.dir / 'gt.csv')
        self.assertEqual(path.read_text().splitlines()[1], 'boat,1.0,2.0,3.0,4.0')


class ConfigTests(PipelineTestCase):
    def setUp(self):
        super().setUp()
        self.make_scene(scene_spec(cars=5))

    def test_defaults_come_from_settings(self):
        config = load_pipeline_config(self.write_config())
        self.assertEqual((config.tile_spec.window, config.tile_spec.overlap_frac), (416, 0.15))
        self.assertEqual(config.nms_iou, 0.5)
        self.assertEqual(config.image_path, self.dir / 'scene.png')
        self.assertEqual(config.out_dir, self.dir / 'out')
        self.assertEqual([e.name for e in config.class_table], ['car', 'boat', 'airplane', 'airport'])

    def test_overrides_win(self):
        config = load_pipeline_config(self.write_config(workers=2)).with_overrides(workers=3, window_px=300)
        self.assertEqual((config.workers, config.tile_spec.window), (3, 300))
        with self.assertRaises(InvalidConfigError):
            config.with_overrides(workers=0)
        with self.assertRaises(InvalidConfigError):
            config.with_overrides(overlap=1.0)

    def test_missing_image(self):
        with self.assertRaisesMessage(InvalidConfigError, 'does not exist'):
            load_pipeline_config(self.write_config(image='nope.png'))

    def test_bad_json(self):
        path = self.dir / 'bad.json'
        path.write_text('{"image": ', encoding='utf-8')
        with self.assertRaises(InvalidConfigError):
            load_pipeline_config(path)

    def test_field_errors_are_named(self):
        with self.assertRaisesMessage(InvalidConfigError, 'nms_iou'):
            load_pipeline_config(self.write_config(nms_iou=0))

    def test_profile_downsample_reaches_the_grid_detector(self):
        profile = {'name': 'all', 'window_m': 124.8, 'window_px': 416, 'downsample': 32,
                   'classes': ['car', 'boat', 'airplane', 'airport'], 'detector': {'type': 'gridsim'}}
        config = load_pipeline_config(self.write_config(ensemble={'profiles': [profile]}))
        (built,) = config.build_ensemble([], 0.3).profiles
        self.assertEqual(built.downsample, 32)
        self.assertEqual(built.detector.config.downsample, 32)
        self.assertEqual(built.grid, (13, 13))

    def test_augment_spec(self):
        path = self.dir / 'augment.json'
        path.write_text(json.dumps({'rotation_angles': [0, 90], 'value': [0.8, 1.2], 'seed': 4}))
        spec = load_augment_spec(path)
        self.assertEqual(spec.rotation_angles, (0.0, 90.0))
        self.assertEqual(spec.hsv_scale_ranges, ((1.0, 1.0), (1.0, 1.0), (0.8, 1.2)))


class SerializerTests(SimpleTestCase):
    def profile(self, **extra):
        return {'name': 'vehicles', 'window_m': 124.8, 'window_px': 416, 'classes': ['car'],
                'detector': {'type': 'oracle'}, **extra}

    def test_detector_or_ensemble(self):
        self.assertFalse(RunConfigSerializer(data={'image': 'a.png'}).is_valid())
        both = {'image': 'a.png', 'detector': {'type': 'oracle'}, 'ensemble': {'profiles': [self.profile()]}}
        self.assertFalse(RunConfigSerializer(data=both).is_valid())
        self.assertTrue(RunConfigSerializer(data={'image': 'a.png', 'detector': {'type': 'oracle'}}).is_valid())

    def test_external_needs_command(self):
        serializer = RunConfigSerializer(data={'image': 'a.png', 'detector': {'type': 'external'}})
        self.assertFalse(serializer.is_valid())
        self.assertIn('command', serializer.errors['detector'])

    def test_overlap_below_one(self):
        data = {'image': 'a.png', 'detector': {'type': 'oracle'}, 'tiling': {'overlap': 1.0}}
        self.assertFalse(RunConfigSerializer(data=data).is_valid())

    def test_odd_window_cannot_simulate_2x(self):
        self.assertFalse(ProfileSerializer(data=self.profile(window_px=415, simulate_2x=True)).is_valid())
        self.assertTrue(ProfileSerializer(data=self.profile(simulate_2x=True)).is_valid())

    def test_profile_downsample_must_match_binding(self):
        gridsim = {'type': 'gridsim', 'downsample': 32}
        self.assertFalse(ProfileSerializer(data=self.profile(detector=gridsim, downsample=16)).is_valid())
        self.assertTrue(ProfileSerializer(data=self.profile(detector=gridsim, downsample=32)).is_valid())
        self.assertTrue(ProfileSerializer(data=self.profile(detector={'type': 'gridsim'}, downsample=16)).is_valid())

    def test_class_routed_twice(self):
        data = {'profiles': [self.profile(), self.profile(name='other')]}
        self.assertFalse(EnsembleSerializer(data=data).is_valid())

    def test_scene_class_alias(self):
        serializer = SceneSpecSerializer(data={
            'name': 's', 'gsd_m': 0.3, 'extent_m': 30, 'objects': [{'class': 'car', 'count': 2, 'size_m': 3}],
        })
        self.assertTrue(serializer.is_valid(), serializer.errors)
        self.assertEqual(serializer.validated_data['objects'][0]['class_name'], 'car')

    def test_scene_size_is_given_once(self):
        data = {'name': 's', 'gsd_m': 0.3, 'extent_m': 30, 'width_px': 10, 'height_px': 10}
        self.assertFalse(SceneSpecSerializer(data=data).is_valid())
        self.assertFalse(SceneSpecSerializer(data={'name': 'a|b', 'gsd_m': 0.3, 'extent_m': 30}).is_valid())


class EndToEndTests(PipelineTestCase):
    def test_noiseless_oracle_scores_perfectly(self):
        # 1.5 km at 0.3 m/px: 5000 x 5000 pixels with 500 ten-pixel cars
        truths = self.make_scene(scene_spec(extent_m=1500, cars=500, seed=11))
        result = run_pipeline(load_pipeline_config(self.write_config()))

        found = sorted(d.box.as_tuple() for d in result.detections)
        self.assertEqual(found, sorted(t.box.as_tuple() for t in truths))
        self.assertTrue(all(d.confidence == 1.0 for d in result.detections))

        report = result.report
        self.assertEqual(report.map, 1.0)
        self.assertEqual(report.average_precisions, {CAR: 1.0})
        for point in report.curves[CAR]:
            self.assertEqual((point.precision, point.recall), (1.0, 1.0))

        self.assertAlmostEqual(result.timings['area_km2'], 2.25, places=12)
        self.assertEqual(result.timings['tiles'], 14 * 14)
        self.assertGreaterEqual(result.timings['overhead_factor'], 1.0)
        for name in ('timings.json', 'report.txt', 'report.csv', 'pr_curves.png', 'scene_detections.csv'):
            self.assertTrue((self.dir / 'out' / name).is_file(), name)
        self.assertTrue((self.dir / 'out' / 'pr_curves' / 'car.dat').is_file())

    def test_worker_count_does_not_change_output(self):
        self.make_scene(scene_spec(extent_m=450, cars=120, seed=3))
        noisy = {'type': 'oracle', 'dropout_prob': 0.1, 'fp_rate': 0.5, 'jitter_px': 1.0}
        path = self.write_config(detector=noisy, seed=9)
        self.command('run', config=str(path), workers=1, out=str(self.dir / 'one'))
        self.command('run', config=str(path), workers=8, out=str(self.dir / 'eight'))
        one = (self.dir / 'one' / 'scene_detections.csv').read_bytes()
        eight = (self.dir / 'eight' / 'scene_detections.csv').read_bytes()
        self.assertEqual(one, eight)
        self.assertEqual(
            (self.dir / 'one' / 'report.csv').read_bytes(), (self.dir / 'eight' / 'report.csv').read_bytes(),
        )

    def test_seed_changes_noise(self):
        self.make_scene(scene_spec(extent_m=300, cars=40, seed=3))
        path = self.write_config(detector={'type': 'oracle', 'fp_rate': 2.0})
        self.command('run', config=str(path), seed=1, out=str(self.dir / 'a'))
        self.command('run', config=str(path), seed=2, out=str(self.dir / 'b'))
        self.assertNotEqual(
            (self.dir / 'a' / 'scene_detections.csv').read_bytes(),
            (self.dir / 'b' / 'scene_detections.csv').read_bytes(),
        )

    def test_ensemble_config(self):
        truths = self.make_scene(scene_spec(extent_m=600, cars=60, seed=4))
        ensemble = {
            'size_filter': True,
            'profiles': [
                {'name': 'vehicles', 'window_m': 124.8, 'window_px': 416,
                 'classes': ['car', 'boat', 'airplane'], 'detector': {'type': 'oracle'}},
                {'name': 'airports', 'window_m': 1000, 'window_px': 250,
                 'classes': ['airport'], 'detector': {'type': 'oracle'}},
            ],
        }
        result = run_pipeline(load_pipeline_config(self.write_config(ensemble=ensemble)))
        self.assertEqual(len(result.detections), len(truths))
        self.assertEqual({d.profile for d in result.detections}, {'vehicles'})
        self.assertEqual(result.report.map, 1.0)

    def test_oracle_without_ground_truth(self):
        self.make_scene(scene_spec(cars=5))
        path = self.write_config(ground_truth=None)
        with self.assertRaisesMessage(InvalidConfigError, 'ground_truth'):
            run_pipeline(load_pipeline_config(path))


class CommandTests(PipelineTestCase):
    def test_staged_commands_match_run(self):
        self.make_scene(scene_spec(extent_m=300, cars=30, seed=8))
        config = str(self.write_config(
            detector={'type': 'oracle', 'fp_rate': 1.0, 'jitter_px': 0.5},
            nms_iou=0.2,
            evaluation={'threshold_count': 5},
        ))
        tiles = self.dir / 'tiles'
        self.command('tile', str(self.dir / 'scene.png'), config=config, out=str(tiles))
        manifest = tiles / 'manifest.tsv'
        self.assertTrue(manifest.is_file())
        self.assertEqual(len(manifest.read_text().splitlines()), 9)

        self.command('detect', str(manifest), config=config, out=str(self.dir / 'local.csv'))
        staged = self.dir / 'staged.csv'
        self.command('stitch', str(manifest), str(self.dir / 'local.csv'), config=config, out=str(staged))

        self.command('run', config=config, out=str(self.dir / 'run'))
        self.assertEqual(staged.read_bytes(), (self.dir / 'run' / 'scene_detections.csv').read_bytes())

        output = self.command(
            'evaluate', str(staged), str(self.dir / 'scene_gt.csv'), config=config, out=str(self.dir / 'report'),
        )
        self.assertIn('mAP', output)
        self.assertEqual(
            (self.dir / 'report' / 'report.csv').read_bytes(), (self.dir / 'run' / 'report.csv').read_bytes(),
        )

    def test_stitch_takes_nms_threshold_from_config(self):
        self.make_scene(scene_spec(extent_m=300, cars=5))
        tiles = self.dir / 'tiles'
        self.command('tile', str(self.dir / 'scene.png'), out=str(tiles))
        local = self.dir / 'local.csv'
        # IoU of the two boxes is 1/3
        local.write_text(
            ','.join(DETECTION_COLUMNS) + '\n'
            'scene|0_0_416_416.png,car,0.0,0.0,10.0,10.0,0.9\n'
            'scene|0_0_416_416.png,car,5.0,0.0,15.0,10.0,0.8\n',
            encoding='utf-8',
        )
        manifest = str(tiles / 'manifest.tsv')
        output = self.command('stitch', manifest, str(local), out=str(self.dir / 'a.csv'))
        self.assertIn('2 detections', output)
        config = str(self.write_config(nms_iou=0.2))
        output = self.command('stitch', manifest, str(local), config=config, out=str(self.dir / 'b.csv'))
        self.assertIn('1 detections', output)

    def test_synth_command(self):
        scene = self.dir / 'demo_scene.json'
        scene.write_text(json.dumps({
            'name': 'demo', 'gsd_m': 0.3, 'extent_m': 300,
            'objects': [{'class': 'car', 'count': 100, 'size_m': 3.0}],
        }))
        output = self.command('synth', str(scene), out=str(self.dir / 'demo'), seed=2)
        self.assertIn('100 objects', output)
        image = read_raster(self.dir / 'demo' / 'demo.png')
        self.assertEqual((image.width, image.gsd), (1000, 0.3))
        labels = read_ground_truth(self.dir / 'demo' / 'demo_gt.csv', self.table)
        self.assertTrue(all(l.box.width == 10.0 for l in labels))

    def test_benchmark_reports_overhead(self):
        self.make_scene(scene_spec(extent_m=300, cars=20))
        output = self.command('benchmark', config=str(self.write_config()))
        self.assertIn('area            0.0900 km2', output)
        self.assertIn('overhead factor', output)
        timings = json.loads((self.dir / 'out' / 'timings.json').read_text())
        self.assertGreaterEqual(timings['overhead_factor'], 1.0)
        self.assertLessEqual(timings['detector_seconds'], timings['wall'])

    def test_benchmark_reports_grid_and_instances(self):
        self.make_scene(scene_spec(extent_m=300, cars=20))
        config = str(self.write_config(detector={'type': 'gridsim', 'downsample': 16}))
        output = self.command('benchmark', config=config, daily_km2=50000.0)
        self.assertIn('grid default    26x26', output)
        self.assertIn('instances', output)
        self.assertIn('for 50000 km2/day', output)
        timings = json.loads((self.dir / 'out' / 'timings.json').read_text())
        self.assertEqual(timings['grids'], {'default': [26, 26]})

    def test_augment_multiplies_chips_by_angle_count(self):
        self.make_scene(scene_spec(extent_m=250, cars=15, seed=6))
        spec = self.dir / 'augment.json'
        spec.write_text(json.dumps({'rotation_angles': list(range(0, 360, 45)), 'value': [0.8, 1.2], 'seed': 1}))
        out = self.dir / 'augmented'
        self.command(
            'augment', spec=str(spec), image=str(self.dir / 'scene.png'),
            labels=str(self.dir / 'scene_gt.csv'), chip_window_m=124.8, out=str(out),
        )
        entries = (out / 'train.txt').read_text().splitlines()
        self.assertTrue(entries)
        self.assertEqual(len(entries) % 8, 0)
        self.assertEqual(len(list(out.glob('*.png'))), len(entries))

    def test_missing_config_flag(self):
        with self.assertRaises(CommandError) as ctx:
            self.command('run')
        self.assertEqual(ctx.exception.returncode, 2)
        self.assertIn('invalid-input', str(ctx.exception))

    def test_augment_without_inputs(self):
        spec = self.dir / 'augment.json'
        spec.write_text(json.dumps({'rotation_angles': [0]}))
        with self.assertRaises(CommandError) as ctx:
            self.command('augment', spec=str(spec))
        self.assertEqual(ctx.exception.returncode, 2)
        self.assertIn('invalid-input', str(ctx.exception))
        with self.assertRaises(CommandError) as ctx:
            self.command('augment', spec=str(spec), image=str(self.dir / 'scene.png'))
        self.assertEqual(ctx.exception.returncode, 2)

    def test_detect_refuses_an_ensemble(self):
        self.make_scene(scene_spec(cars=5))
        ensemble = {'profiles': [{'name': 'all', 'window_m': 124.8, 'window_px': 416,
                                  'classes': ['car', 'boat', 'airplane', 'airport'], 'detector': {'type': 'oracle'}}]}
        self.command('tile', str(self.dir / 'scene.png'), out=str(self.dir / 'tiles'))
        with self.assertRaises(CommandError) as ctx:
            self.command('detect', str(self.dir / 'tiles' / 'manifest.tsv'),
                         config=str(self.write_config(ensemble=ensemble)))
        self.assertEqual(ctx.exception.returncode, 3)
        self.assertIn('invalid-config', str(ctx.exception))

    def test_missing_detector_binary_is_a_process_failure(self):
        self.make_scene(scene_spec(cars=5))
        detector = {'type': 'external', 'command': 'no-such-detector-binary {manifest} {output}'}
        with self.assertRaises(CommandError) as ctx:
            self.command('run', config=str(self.write_config(detector=detector, ground_truth=None)))
        self.assertEqual(ctx.exception.returncode, 10)
        self.assertIn('process-failure', str(ctx.exception))

    def test_pipeline_errors_carry_exit_codes(self):
        self.make_scene(scene_spec(cars=5))
        with self.assertRaises(CommandError) as ctx:
            self.command('run', config=str(self.write_config(image='missing.png')))
        self.assertEqual(ctx.exception.returncode, 3)
        self.assertIn('invalid-config', str(ctx.exception))

        (self.dir / 'scene.json').unlink()
        with self.assertRaises(CommandError) as ctx:
            self.command('tile', str(self.dir / 'scene.png'), out=str(self.dir / 'tiles'))
        self.assertEqual(ctx.exception.returncode, 8)
