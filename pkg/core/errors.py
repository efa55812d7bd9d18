"""Exception family for the CREM simulator.

Every error carries a message that can be shown to an operator as-is.
"""
from __future__ import annotations

from typing import Optional

__all__ = [
    "CremError",
    "DomainError",
    "MalformedKnots",
    "NotAttained",
    "InfiniteEndSlope",
    "PopulationOverflow",
    "DegenerateTree",
    "TooFewSamples",
    "DegenerateDesign",
    "ConfigError",
    "DivergenceWarning",
]


class CremError(RuntimeError):
    """Base class for simulator failures."""


class DomainError(CremError, ValueError):
    """An argument lies outside the domain of the operation."""


class MalformedKnots(CremError, ValueError):
    """Piecewise-linear knots are not strictly increasing in x."""


class NotAttained(CremError):
    """A target value is outside the range of a profile."""


class InfiniteEndSlope(CremError):
    """An oracle needs a finite A'(1) but the speed function flags +inf."""


class PopulationOverflow(CremError):
    """A replica produced more leaves than the configured cap."""

    def __init__(self, leaves: int, cap: int) -> None:
        super().__init__(f"population overflow: {leaves} leaves exceed cap {cap}; retry at smaller t")
        self.leaves = leaves
        self.cap = cap


class DegenerateTree(CremError):
    """A replica has a single leaf where a pair is required."""


class TooFewSamples(CremError, ValueError):
    """An estimator received fewer samples than it needs."""


class DegenerateDesign(CremError, ValueError):
    """A regression design has too few distinct abscissae."""


class ConfigError(CremError):
    """A configuration key is missing, unknown or malformed."""

    def __init__(self, key: str, message: str) -> None:
        super().__init__(f"config key {key!r}: {message}")
        self.key = key


class DivergenceWarning(UserWarning):
    """A moment grows with t; the finite-t value is still returned."""
