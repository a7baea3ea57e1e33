"""
Detector construction from validated config bindings.
"""
import logging
from pathlib import Path

from apps.core.exceptions import InvalidConfigError, InvalidInputError

from .external import ExternalProcessDetector, HttpDetector
from .gridsim import GridSimConfig, GridSimDetector
from .oracle import ConfidenceLaw, OracleDetector, OracleNoiseModel

logger = logging.getLogger(__name__)

DETECTOR_TYPES = ('oracle', 'gridsim', 'external', 'http')


def _oracle(binding, truths, seed):
    law = ConfidenceLaw(
        tp_range=tuple(binding.get('tp_range', (0.7, 1.0))),
        fp_range=tuple(binding.get('fp_range', (0.05, 0.7))),
    )
    noise = OracleNoiseModel(
        dropout_prob=binding.get('dropout_prob', 0.0),
        fp_rate=binding.get('fp_rate', 0.0),
        jitter_px=binding.get('jitter_px', 0.0),
        confidence_law=law,
        seed=seed if seed is not None else binding.get('seed', 0),
    )
    return OracleDetector(truths=tuple(truths), noise=noise, truncation=binding.get('truncation'))


def _gridsim(binding, truths, seed):
    config = GridSimConfig.from_settings(
        downsample=binding.get('downsample'),
        boxes_per_cell=binding.get('boxes_per_cell'),
    )
    return GridSimDetector(truths=tuple(truths), config=config, truncation=binding.get('truncation'))


def _external(binding, truths, seed):
    return ExternalProcessDetector(
        command_template=binding['command'],
        workdir=Path(binding['workdir']),
        timeout=binding.get('timeout'),
    )


def _http(binding, truths, seed):
    return HttpDetector(url=binding['url'], timeout=binding.get('timeout'))


BUILDERS = {
    'oracle': _oracle,
    'gridsim': _gridsim,
    'external': _external,
    'http': _http,
}


def build_detector(binding, truths=(), seed=None):
    """
    Detector for a binding such as ``{'type': 'oracle', 'fp_rate': 0.5}``.

    ``truths`` feeds the ground-truth detectors and is ignored by the
    external ones; ``seed`` overrides the binding's own seed.
    """
    kind = binding.get('type')
    builder = BUILDERS.get(kind)
    if builder is None:
        raise InvalidConfigError(f"Unknown detector type {kind!r}; expected one of {', '.join(DETECTOR_TYPES)}")
    try:
        detector = builder(binding, truths, seed)
    except KeyError as e:
        raise InvalidConfigError(f"Detector binding {kind!r} is missing {e}") from e
    except InvalidInputError as e:
        raise InvalidConfigError(f"Detector binding {kind!r}: {e}") from e
    logger.debug(f"Built {detector.identifier} detector from binding {binding}")
    return detector
