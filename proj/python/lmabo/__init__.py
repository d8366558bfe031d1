"""Adaptive acquisition-function selection for Bayesian optimization."""

from ._lmabo import (
    ConfigError,
    DataError,
    GPModel,
    NotFoundError,
    analyze,
    evaluate,
    fit_gp,
    optimize_acquisition,
    parse_decision,
    problems,
    run,
    strategist_labels,
)

__all__ = [
    "ConfigError",
    "DataError",
    "GPModel",
    "NotFoundError",
    "analyze",
    "evaluate",
    "fit_gp",
    "optimize_acquisition",
    "parse_decision",
    "problems",
    "run",
    "strategist_labels",
]
