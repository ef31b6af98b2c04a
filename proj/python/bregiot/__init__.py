"""Python access to the bregiot solvers.

Matrices are NumPy arrays (float64). Generators and constraint sets are named
by the same ids the command-line tool accepts, e.g. ``"entropy"``,
``"beta:0.5"``, ``"sh"`` or ``"shw:0.5,1,2"``.
"""

import json

from ._bregiot import (
    ConvergenceError,
    DataError,
    DimensionError,
    DomainError,
    Error,
    GeneratorError,
    IoError,
    LineSearchFailure,
    MaxIterationsExceeded,
    UnsupportedCase,
    contains,
    g_map,
    generator_eval,
    invert_closed_form,
    project,
    set_membership,
    solve_forward,
    solve_iot,
    stability_rhs,
)
from . import _bregiot


def run_experiment(config):
    """Run exp-random, exp-stability or exp-lambda from a config dict."""
    return json.loads(_bregiot.run_experiment_json(json.dumps(config)))


def version():
    return json.loads(_bregiot.version_json())


__all__ = [
    "ConvergenceError",
    "DataError",
    "DimensionError",
    "DomainError",
    "Error",
    "GeneratorError",
    "IoError",
    "LineSearchFailure",
    "MaxIterationsExceeded",
    "UnsupportedCase",
    "contains",
    "g_map",
    "generator_eval",
    "invert_closed_form",
    "project",
    "run_experiment",
    "set_membership",
    "solve_forward",
    "solve_iot",
    "stability_rhs",
    "version",
]
