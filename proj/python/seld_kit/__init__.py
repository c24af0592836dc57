"""Sound event detection and front/back speech localization for phone arrays."""

import json

import numpy as np

from . import _core
from ._core import (
    ConfigError,
    FormatError,
    Predictor,
    SeldError,
    ShapeError,
    VersionError,
    block_features,
    checkpoint_info as _checkpoint_info,
    f1_score,
    fnv1a_hex,
    fractional_delay,
    gcc,
    gradient_check,
    magnitude_difference,
    oversample_balance,
    read_wav,
)

__all__ = [
    "ConfigError",
    "FormatError",
    "Predictor",
    "SeldError",
    "ShapeError",
    "VersionError",
    "block_features",
    "checkpoint_info",
    "config_hash",
    "default_config",
    "f1_score",
    "fnv1a_hex",
    "fold_stats",
    "fractional_delay",
    "gcc",
    "gradient_check",
    "magnitude_difference",
    "oversample_balance",
    "parameter_count",
    "random_scene",
    "read_wav",
    "render_scene",
    "write_wav",
]


def random_scene(scene_id, scene_kind="indoor", seed=0, duration_s=30.0):
    return json.loads(_core.random_scene(scene_id, scene_kind, seed, duration_s))


def render_scene(spec):
    """Returns (audio of shape (8, samples), sample_rate, per-second labels)."""
    return _core.render_scene(json.dumps(spec))


def write_wav(path, audio, sample_rate):
    _core.write_wav(str(path), np.asarray(audio, dtype=np.float32), sample_rate)


def default_config():
    return json.loads(_core.default_config())


def config_hash(config):
    return _core.config_hash(json.dumps(config))


def parameter_count(stage, config=None):
    return _core.parameter_count(stage, json.dumps(config) if config is not None else "")


def fold_stats(folds, labels):
    """Per-fold label counts; `labels` holds (front, back, else) triples."""
    codes = [int(f) | int(b) << 1 | int(e) << 2 for f, b, e in labels]
    return _core.fold_stats(list(folds), codes)


def checkpoint_info(path):
    info = _checkpoint_info(str(path))
    info["metadata"] = json.loads(info["metadata"])
    return info
