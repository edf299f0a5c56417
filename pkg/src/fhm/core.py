"""Fuzzy values, unit intervals and logistic squashing.

Shared numeric conventions for the whole package live here.  Every
reduction inside the dynamics uses :func:`exact_sum` (``math.fsum``),
which returns the correctly rounded sum of its terms.  Correct rounding
makes the sum independent of term order, and that is what later allows
relabeling/decoupling checks to hold bit for bit rather than only up to
a tolerance.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Sequence

__all__ = [
    "FuzzyValue",
    "FuzzyInterval",
    "SquashKind",
    "SquashingFunction",
    "squash",
    "squash_grad",
    "interval_hull",
    "exact_sum",
]

# Correctly rounded (hence permutation invariant) floating point sum.
exact_sum = math.fsum


class FuzzyValue(float):
    """A membership degree, a float constrained to [0, 1]."""

    __slots__ = ()

    def __new__(cls, value: float) -> "FuzzyValue":
        v = float(value)
        if not math.isfinite(v) or v < 0.0 or v > 1.0:
            raise ValueError(f"fuzzy value must lie in [0, 1], got {value!r}")
        return super().__new__(cls, v)

    @classmethod
    def clamped(cls, value: float) -> "FuzzyValue":
        """Clamp a finite float into [0, 1] and wrap it."""
        v = float(value)
        if not math.isfinite(v):
            raise ValueError(f"cannot clamp non-finite value {value!r}")
        return cls(min(1.0, max(0.0, v)))


@dataclass(frozen=True)
class FuzzyInterval:
    """Closed subinterval [lo, hi] of the unit interval."""

    lo: float
    hi: float

    def __post_init__(self) -> None:
        lo = float(self.lo)
        hi = float(self.hi)
        if not (math.isfinite(lo) and math.isfinite(hi)):
            raise ValueError("interval bounds must be finite")
        if lo < 0.0 or hi > 1.0 or lo > hi:
            raise ValueError(f"need 0 <= lo <= hi <= 1, got [{lo}, {hi}]")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @property
    def width(self) -> float:
        return self.hi - self.lo

    @property
    def midpoint(self) -> float:
        return 0.5 * (self.lo + self.hi)

    @property
    def is_degenerate(self) -> bool:
        return self.lo == self.hi

    def contains(self, value: float) -> bool:
        return self.lo <= value <= self.hi


class SquashKind(Enum):
    LOGISTIC = "logistic"


@dataclass(frozen=True)
class SquashingFunction:
    """Parameterized squashing nonlinearity sigma(lambda * x).

    Only the logistic kind is defined for now; the enum leaves room for
    alternatives without changing call sites.
    """

    kind: SquashKind = SquashKind.LOGISTIC
    steepness: float = 1.0

    def __post_init__(self) -> None:
        if not isinstance(self.kind, SquashKind):
            raise ValueError(f"unknown squashing kind {self.kind!r}")
        s = float(self.steepness)
        if not math.isfinite(s) or s <= 0.0:
            raise ValueError(f"steepness must be finite and > 0, got {self.steepness!r}")
        object.__setattr__(self, "steepness", s)

    def value(self, x: float) -> float:
        """sigma(steepness * x), evaluated in overflow-safe form."""
        t = self.steepness * x
        # Split by sign so exp never overflows; at |t| beyond ~37 the
        # result rounds to an endpoint, which is the best float64 can do.
        if t >= 0.0:
            return 1.0 / (1.0 + math.exp(-t))
        e = math.exp(t)
        return e / (1.0 + e)

    def grad(self, x: float) -> float:
        """d/dx sigma(steepness * x) = steepness * s * (1 - s)."""
        s = self.value(x)
        return self.steepness * s * (1.0 - s)


def squash(f: SquashingFunction, x: float) -> FuzzyValue:
    """Apply the squashing function to a finite pre-activation.

    The logistic maps any finite x into (0, 1), so the result is always
    a valid fuzzy value (endpoints can be reached by float rounding at
    extreme magnitudes).
    """
    xf = float(x)
    if not math.isfinite(xf):
        raise ValueError(f"squash input must be finite, got {x!r}")
    return FuzzyValue(f.value(xf))


def squash_grad(f: SquashingFunction, x: float) -> float:
    """Derivative of :func:`squash` at a finite point."""
    xf = float(x)
    if not math.isfinite(xf):
        raise ValueError(f"squash_grad input must be finite, got {x!r}")
    return f.grad(xf)


def interval_hull(samples: Iterable[float] | Sequence[float]) -> FuzzyInterval:
    """Tightest fuzzy interval containing all samples.

    Samples must be a non-empty collection of values in [0, 1].
    """
    vals = [float(v) for v in samples]
    if not vals:
        raise ValueError("interval_hull needs at least one sample")
    lo = min(vals)
    hi = max(vals)
    if not (math.isfinite(lo) and math.isfinite(hi)) or lo < 0.0 or hi > 1.0:
        raise ValueError("interval_hull samples must lie in [0, 1]")
    return FuzzyInterval(lo, hi)
