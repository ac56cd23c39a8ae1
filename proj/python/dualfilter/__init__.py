"""Dual filter for hidden Markov models and linear Gaussian models."""

import json

from ._core import (
    ArgumentError,
    ConvergenceError,
    Error,
    Hmm,
    ImpossiblePathError,
    ModelError,
    NumericError,
    TreeTooLargeError,
    dual_filter,
    entropy_benchmark,
    entropy_benchmark_exact,
    event_columns,
    forward_filter,
    path_weights,
    perturb,
    sample_paths,
    two_cycle,
)
from . import _core

__version__ = "0.1.0"


def default_config(experiment):
    """Default config of an experiment as a dict."""
    return json.loads(_core.default_config(experiment))


def run_experiment(experiment, config=None, out_dir="out", format="csv"):
    """Run an experiment, write its files into out_dir, return the manifest."""
    text = json.dumps(config) if config else ""
    return json.loads(_core.run_experiment(experiment, text, str(out_dir), format))


__all__ = [
    "ArgumentError",
    "ConvergenceError",
    "Error",
    "Hmm",
    "ImpossiblePathError",
    "ModelError",
    "NumericError",
    "TreeTooLargeError",
    "default_config",
    "dual_filter",
    "entropy_benchmark",
    "entropy_benchmark_exact",
    "event_columns",
    "forward_filter",
    "path_weights",
    "perturb",
    "run_experiment",
    "sample_paths",
    "two_cycle",
]
