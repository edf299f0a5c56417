"""Fuzzy hierarchical multiplex toolkit.

A two-layer fuzzy cognitive structure: an outer weighted graph whose
nodes each contain an inner fuzzy cognitive map, coupled in both
directions.  The package covers simulation, gradient-based fitting
against service-metric targets, node contribution ranking, interval
valued propagation of input uncertainty, and a flat single-map baseline
for comparison.
"""

from .core import (
    FuzzyInterval,
    FuzzyValue,
    SquashKind,
    SquashingFunction,
    interval_hull,
    squash,
    squash_grad,
)

__version__ = "0.1.0"

__all__ = [
    "FuzzyValue",
    "FuzzyInterval",
    "SquashKind",
    "SquashingFunction",
    "squash",
    "squash_grad",
    "interval_hull",
    "__version__",
]
