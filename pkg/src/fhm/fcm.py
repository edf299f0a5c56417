"""Single-layer fuzzy cognitive maps.

Convention: ``weights[d][c]`` is the signed influence of concept ``d``
on concept ``c``, so one synchronous step reads

    a'[c] = sigma(lambda * (sum_d a[d] * weights[d][c] + external[c]))

i.e. the activation row vector multiplies the weight matrix from the
left.  Pre-activation sums are evaluated with ``math.fsum`` so the
result does not depend on concept order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Sequence

import numpy as np

from .core import SquashingFunction, exact_sum

__all__ = ["Fcm", "RunStatus", "fcm_step", "fcm_run"]


class RunStatus(Enum):
    FIXPOINT = "fixpoint"
    CYCLE = "cycle"
    BUDGET_EXHAUSTED = "budget_exhausted"


def _as_unit_matrix(w, name: str) -> np.ndarray:
    m = np.asarray(w, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValueError(f"{name} must be a square matrix, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise ValueError(f"{name} contains non-finite entries")
    if np.any(np.abs(m) > 1.0):
        raise ValueError(f"{name} entries must lie in [-1, 1]")
    m.flags.writeable = False
    return m


def _as_finite_vector(v, n: int, name: str) -> np.ndarray:
    a = np.asarray(v, dtype=float)
    if a.shape != (n,):
        raise ValueError(f"{name} must have shape ({n},), got {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{name} contains non-finite entries")
    a.flags.writeable = False
    return a


def check_activations(v, n: int, name: str = "activations") -> np.ndarray:
    """Validate an activation vector: shape (n,), entries in [0, 1]."""
    a = np.asarray(v, dtype=float)
    if a.shape != (n,):
        raise ValueError(f"{name} must have shape ({n},), got {a.shape}")
    if not np.all(np.isfinite(a)) or np.any(a < 0.0) or np.any(a > 1.0):
        raise ValueError(f"{name} entries must lie in [0, 1]")
    return a.copy()


@dataclass(frozen=True)
class Fcm:
    """Concept weight matrix plus per-concept external input.

    ``external_input`` is an unbounded additive bias per concept; the
    weight matrix entries are confined to [-1, 1].
    """

    weights: np.ndarray
    external_input: np.ndarray
    squash: SquashingFunction = field(default_factory=SquashingFunction)

    def __post_init__(self) -> None:
        w = _as_unit_matrix(self.weights, "weights")
        x = _as_finite_vector(self.external_input, w.shape[0], "external_input")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "external_input", x)

    @property
    def n(self) -> int:
        return self.weights.shape[0]


def fcm_step(m: Fcm, activations) -> np.ndarray:
    """One synchronous update of all concepts."""
    a = check_activations(activations, m.n)
    # elementwise products first, then a correctly rounded sum per column
    prods = a[:, None] * m.weights
    out = np.empty(m.n)
    for c in range(m.n):
        pre = exact_sum([*prods[:, c], m.external_input[c]])
        out[c] = m.squash.value(pre)
    return out


def fcm_run(
    m: Fcm,
    a0,
    max_steps: int = 100,
    tol: float = 1e-6,
) -> tuple[np.ndarray, RunStatus, int]:
    """Iterate fcm_step until fixpoint, cycle, or step budget.

    A fixpoint is declared when the max-norm change from the previous
    state drops below tol; a cycle when the new state returns within
    tol of any earlier non-adjacent state.  Returns (final activations,
    status, steps actually taken).
    """
    if max_steps < 0:
        raise ValueError("max_steps must be >= 0")
    if not (tol > 0.0):
        raise ValueError("tol must be > 0")
    a = check_activations(a0, m.n, "a0")
    if max_steps == 0:
        return a, RunStatus.BUDGET_EXHAUSTED, 0
    history = [a]
    for k in range(1, max_steps + 1):
        nxt = fcm_step(m, a)
        if float(np.max(np.abs(nxt - a))) < tol:
            return nxt, RunStatus.FIXPOINT, k
        for old in history[:-1]:
            if float(np.max(np.abs(nxt - old))) < tol:
                return nxt, RunStatus.CYCLE, k
        history.append(nxt)
        a = nxt
    return a, RunStatus.BUDGET_EXHAUSTED, max_steps
