"""Evaluation framework for biometric anonymization."""

import json
import os

from ._core import (
    BioanonError,
    generate_faces,
    generate_gait,
    halving_grid,
    synthesize_gait,
)
from . import _core

__all__ = [
    "BioanonError",
    "anonymize_dataset",
    "anonymize_gait",
    "anonymize_image",
    "generate_faces",
    "generate_gait",
    "halving_grid",
    "resolve_config",
    "run_experiment",
    "select",
    "synthesize_gait",
]


def _spec(spec):
    return json.dumps(spec)


def anonymize_gait(sequence, spec, seed=0):
    """Anonymize one (100, 156) gait array. `spec` is a kind name or a dict."""
    return _core.anonymize_gait(sequence, _spec(spec), seed)


def anonymize_image(image, spec, seed=0, background=None):
    """Anonymize one (h, w, 3) uint8 image."""
    return _core.anonymize_image(image, _spec(spec), seed, background)


def anonymize_dataset(dataset, spec, out, seed=0, background=None):
    """Write an anonymized copy of a dataset; returns the new manifest path."""
    return _core.anonymize_dataset(dataset, _spec(spec), seed, out, background)


def resolve_config(config, base_dir=""):
    """Return (resolved config dict, run id)."""
    text, run_id = _core.resolve_config(json.dumps(config), os.fspath(base_dir))
    return json.loads(text), run_id


def select(config, base_dir="", repeat=0):
    return _core.select(json.dumps(config), os.fspath(base_dir), repeat)


def run_experiment(config, base_dir=""):
    """Run an evaluation grid. Returns {"results", "errors", "n_cells"}."""
    return _core.run_experiment(json.dumps(config), os.fspath(base_dir))
