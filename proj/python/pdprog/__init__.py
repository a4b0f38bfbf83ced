"""Disease progression forecasting from clinical and proteomic visits.

Thin wrapper over the C++ core. Functions that run the pipeline take keyword
overrides of the JSON run config (nested sections as dicts).
"""

import json

from ._pdprog import (
    PdprogError,
    analyze,
    bspline_basis,
    default_config,
    evaluate,
    generate,
    gradcheck,
    mse,
    parameter_summary,
    profile,
    rmse,
    smape,
    soft_impute,
)
from . import _pdprog

__all__ = [
    "PdprogError",
    "analyze",
    "benchmark",
    "bspline_basis",
    "config",
    "default_config",
    "evaluate",
    "generate",
    "gradcheck",
    "mse",
    "parameter_summary",
    "profile",
    "rmse",
    "smape",
    "soft_impute",
    "train",
]


def config(**overrides):
    """Full validated run config as a dict, defaults overlaid with `overrides`."""
    return json.loads(_pdprog.resolve_config(json.dumps(overrides)))


def train(**overrides):
    """Trains one model; returns report, baseline and loss history."""
    return _pdprog.train(json.dumps(overrides))


def benchmark(**overrides):
    """Trains both model families on one split; returns their reports and the mean baseline."""
    return _pdprog.benchmark(json.dumps(overrides))
