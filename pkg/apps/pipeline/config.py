"""
JSON config files, validated with DRF serializers and turned into frozen
dataclasses. Relative paths resolve against the folder holding the file.
"""
import dataclasses
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from django.conf import settings

from apps.augment.services import AugmentSpec
from apps.core.exceptions import InvalidConfigError, PipelineError
from apps.core.types import ClassTable
from apps.detectors.registry import build_detector
from apps.evaluation.services import EvalConfig
from apps.multiscale.services import EnsembleConfig, ScaleProfile, single_profile
from apps.tiling.services import TileSpec

from .serializers import AugmentSpecSerializer, RunConfigSerializer

logger = logging.getLogger(__name__)


def load_json(path):
    path = Path(path)
    try:
        return json.loads(path.read_text(encoding='utf-8'))
    except OSError as e:
        raise InvalidConfigError(f"Cannot read config {path}: {e}") from e
    except ValueError as e:
        raise InvalidConfigError(f"Config {path} is not valid JSON: {e}") from e


def _flatten_errors(errors, prefix=''):
    if isinstance(errors, dict):
        for key, value in errors.items():
            yield from _flatten_errors(value, f"{prefix}{key}." if key != 'non_field_errors' else prefix)
    elif isinstance(errors, list):
        for index, value in enumerate(errors):
            if isinstance(value, (dict, list)):
                yield from _flatten_errors(value, f"{prefix}{index}.")
            else:
                yield f"{prefix.rstrip('.') or 'config'}: {value}"
    else:
        yield f"{prefix.rstrip('.') or 'config'}: {errors}"


def validate(serializer_class, data, source):
    serializer = serializer_class(data=data)
    if not serializer.is_valid():
        details = '; '.join(_flatten_errors(serializer.errors))
        raise InvalidConfigError(f"{source}: {details}")
    return serializer.validated_data


def _resolve(base, value):
    path = Path(value)
    return path if path.is_absolute() else (base / path)


def _grid_downsample(binding, detector):
    # only the grid simulator has a known output stride
    return detector.config.downsample if binding['type'] == 'gridsim' else None


@dataclass(frozen=True)
class PipelineConfig:
    source: Path
    image_path: Path
    gt_path: Optional[Path]
    out_dir: Path
    workers: int
    seed: int
    tile_spec: TileSpec
    nms_iou: float
    class_table: ClassTable = field(repr=False)
    detector: Optional[dict] = None
    ensemble: Optional[dict] = None
    evaluation: dict = field(default_factory=dict)

    def with_overrides(self, workers=None, seed=None, window_px=None, overlap=None, nms_iou=None, out=None):
        """Command-line flags win over the file"""
        changes = {}
        if workers is not None:
            if workers < 1:
                raise InvalidConfigError(f"--workers must be >= 1, got {workers}")
            changes['workers'] = workers
        if seed is not None:
            changes['seed'] = seed
        if window_px is not None or overlap is not None:
            try:
                changes['tile_spec'] = TileSpec(
                    window=window_px if window_px is not None else self.tile_spec.window,
                    overlap_frac=overlap if overlap is not None else self.tile_spec.overlap_frac,
                )
            except PipelineError as e:
                raise InvalidConfigError(str(e)) from e
        if nms_iou is not None:
            if not 0.0 < nms_iou <= 1.0:
                raise InvalidConfigError(f"--nms-iou must lie in (0, 1], got {nms_iou}")
            changes['nms_iou'] = nms_iou
        if out is not None:
            changes['out_dir'] = Path(out)
        return dataclasses.replace(self, **changes)

    def eval_config(self):
        try:
            return EvalConfig.from_settings(class_table=self.class_table, nms_iou=self.nms_iou, **self.evaluation)
        except PipelineError as e:
            raise InvalidConfigError(f"{self.source}: evaluation: {e}") from e

    def resolve_binding(self, binding, label):
        binding = dict(binding)
        if binding['type'] == 'external':
            workdir = binding.get('workdir')
            binding['workdir'] = _resolve(self.source.parent, workdir) if workdir else self.out_dir / 'external' / label
        return binding

    def build_ensemble(self, truths, gsd):
        """EnsembleConfig for this run; a plain detector becomes a one-profile ensemble"""
        if self.ensemble is None:
            detector = build_detector(self.resolve_binding(self.detector, 'default'), truths, self.seed)
            return single_profile(
                detector, self.tile_spec, self.class_table, gsd,
                nms_iou=self.nms_iou, downsample=_grid_downsample(self.detector, detector),
            )
        profiles = []
        for raw in self.ensemble['profiles']:
            try:
                classes = frozenset(self.class_table.id_of(name) for name in raw['classes'])
            except KeyError as e:
                raise InvalidConfigError(f"{self.source}: profile {raw['name']} routes unknown class {e}") from None
            binding = self.resolve_binding(raw['detector'], raw['name'])
            if binding['type'] == 'gridsim' and raw.get('downsample') is not None:
                binding.setdefault('downsample', raw['downsample'])
            detector = build_detector(binding, truths, self.seed)
            profiles.append(ScaleProfile(
                name=raw['name'],
                window_m=raw['window_m'],
                window_px=raw['window_px'],
                classes=classes,
                detector=detector,
                downsample=raw.get('downsample') or _grid_downsample(binding, detector),
                simulate_2x=raw['simulate_2x'],
            ))
        return EnsembleConfig(profiles=tuple(profiles), nms_iou=self.nms_iou, size_filter=self.ensemble['size_filter'])


def load_pipeline_config(path):
    path = Path(path).resolve()
    data = validate(RunConfigSerializer, load_json(path), path)
    base = path.parent
    pipeline = settings.PIPELINE

    image_path = _resolve(base, data['image'])
    if not image_path.is_file():
        raise InvalidConfigError(f"{path}: image {image_path} does not exist")
    gt_path = None
    if data.get('ground_truth'):
        gt_path = _resolve(base, data['ground_truth'])
        if not gt_path.is_file():
            raise InvalidConfigError(f"{path}: ground truth {gt_path} does not exist")

    tiling = data.get('tiling', {})
    try:
        tile_spec = TileSpec.from_settings(window=tiling.get('window_px'), overlap_frac=tiling.get('overlap'))
        class_table = ClassTable.from_records(data['classes']) if 'classes' in data else ClassTable.from_settings()
    except PipelineError as e:
        raise InvalidConfigError(f"{path}: {e}") from e

    config = PipelineConfig(
        source=path,
        image_path=image_path,
        gt_path=gt_path,
        out_dir=_resolve(base, data.get('out', 'out')),
        workers=data.get('workers', pipeline['WORKERS']),
        seed=data.get('seed', pipeline['SEED']),
        tile_spec=tile_spec,
        nms_iou=data.get('nms_iou', pipeline['NMS_IOU']),
        class_table=class_table,
        detector=data.get('detector'),
        ensemble=data.get('ensemble'),
        evaluation=dict(data.get('evaluation', {})),
    )
    logger.debug(f"Loaded run config {path}")
    return config


def load_augment_spec(path):
    path = Path(path).resolve()
    data = validate(AugmentSpecSerializer, load_json(path), path)
    try:
        return AugmentSpec(
            rotation_angles=tuple(data['rotation_angles']),
            hsv_scale_ranges=(data['hue'], data['saturation'], data['value']),
            seed=data['seed'],
        )
    except PipelineError as e:
        raise InvalidConfigError(f"{path}: {e}") from e
