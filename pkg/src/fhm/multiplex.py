"""Two-layer multiplex structure and its synchronous dynamics.

Layout: an outer weighted digraph over nodes 0..N-1 (weights V, bias
b), each node i holding an inner map with its own concepts.  Three
couplings tie the layers together:

* down: concept c of node i receives ``down_coupling[i][c] * Y_i``,
* up: the outer pre-activation of node i receives an aggregate (mean
  or max) of node i's freshly updated inner activations,
* sideways: optional interlayer edges feed concept activations of one
  node into concepts of another node, always read from the previous
  step's state.

One multiplex step updates every inner map from the time-t state, then
updates the outer layer using the new inner activations.  All sums are
``math.fsum`` reductions, so node and edge order never changes results.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Sequence

import numpy as np

from .core import SquashingFunction, exact_sum
from .fcm import Fcm, RunStatus, check_activations, _as_finite_vector

__all__ = [
    "Aggregation",
    "InterlayerEdge",
    "Multiplex",
    "MultiplexState",
    "aggregate",
    "interlayer_signal",
    "initial_state",
    "inner_update",
    "outer_update",
    "multiplex_step",
    "multiplex_run",
    "relabel_nodes",
    "relabel_state",
]


class Aggregation(Enum):
    MEAN = "mean"
    MAX = "max"


@dataclass(frozen=True)
class InterlayerEdge:
    """Directed concept-to-concept edge between two distinct nodes."""

    src_node: int
    src_concept: int
    dst_node: int
    dst_concept: int
    weight: float

    def __post_init__(self) -> None:
        if self.src_node == self.dst_node:
            raise ValueError("interlayer edge must connect distinct nodes")
        w = float(self.weight)
        if not math.isfinite(w) or abs(w) > 1.0:
            raise ValueError(f"interlayer weight must lie in [-1, 1], got {self.weight!r}")
        object.__setattr__(self, "weight", w)


@dataclass(frozen=True)
class Multiplex:
    """Outer graph plus one inner map per node.

    outer_weights[j][i] is the influence of node j's outer activation
    on node i.  down_coupling[i] has one entry per concept of node i.
    """

    outer_weights: np.ndarray
    outer_bias: np.ndarray
    inner: tuple[Fcm, ...]
    down_coupling: tuple[np.ndarray, ...]
    up_aggregation: tuple[Aggregation, ...]
    interlayer: tuple[InterlayerEdge, ...] = ()
    squash: SquashingFunction = field(default_factory=SquashingFunction)

    def __post_init__(self) -> None:
        v = np.asarray(self.outer_weights, dtype=float)
        n = len(self.inner)
        if n == 0:
            raise ValueError("multiplex needs at least one node")
        if v.shape != (n, n):
            raise ValueError(f"outer_weights must have shape ({n}, {n}), got {v.shape}")
        if not np.all(np.isfinite(v)) or np.any(np.abs(v) > 1.0):
            raise ValueError("outer weights must be finite and lie in [-1, 1]")
        v.flags.writeable = False
        b = _as_finite_vector(self.outer_bias, n, "outer_bias")
        inner = tuple(self.inner)
        if not all(isinstance(f, Fcm) for f in inner):
            raise ValueError("inner must contain Fcm instances")
        if len(self.down_coupling) != n:
            raise ValueError("down_coupling must have one vector per node")
        coup = []
        for i, c in enumerate(self.down_coupling):
            ci = np.asarray(c, dtype=float)
            if ci.shape != (inner[i].n,):
                raise ValueError(
                    f"down_coupling[{i}] must have shape ({inner[i].n},), got {ci.shape}"
                )
            if not np.all(np.isfinite(ci)) or np.any(np.abs(ci) > 1.0):
                raise ValueError(f"down_coupling[{i}] entries must lie in [-1, 1]")
            ci.flags.writeable = False
            coup.append(ci)
        if len(self.up_aggregation) != n:
            raise ValueError("up_aggregation must have one entry per node")
        if not all(isinstance(a, Aggregation) for a in self.up_aggregation):
            raise ValueError("up_aggregation entries must be Aggregation values")
        edges = tuple(self.interlayer)
        for e in edges:
            if not (0 <= e.src_node < n and 0 <= e.dst_node < n):
                raise ValueError(f"interlayer edge references unknown node: {e}")
            if not (0 <= e.src_concept < inner[e.src_node].n):
                raise ValueError(f"interlayer edge source concept out of range: {e}")
            if not (0 <= e.dst_concept < inner[e.dst_node].n):
                raise ValueError(f"interlayer edge target concept out of range: {e}")
        object.__setattr__(self, "outer_weights", v)
        object.__setattr__(self, "outer_bias", b)
        object.__setattr__(self, "inner", inner)
        object.__setattr__(self, "down_coupling", tuple(coup))
        object.__setattr__(self, "up_aggregation", tuple(self.up_aggregation))
        object.__setattr__(self, "interlayer", edges)

    @property
    def outer_n(self) -> int:
        return len(self.inner)

    @property
    def inner_sizes(self) -> tuple[int, ...]:
        return tuple(f.n for f in self.inner)


@dataclass(frozen=True)
class MultiplexState:
    """Activations of both layers plus the cached interlayer signal.

    interlayer_input[i][c] is the already-summed sideways contribution
    into concept c of node i, computed from the same step's inner
    activations.  Keeping it in the state means a step can read the
    previous signal without touching edge lists twice.
    """

    outer: np.ndarray
    inners: tuple[np.ndarray, ...]
    interlayer_input: tuple[np.ndarray, ...]

    def __post_init__(self) -> None:
        y = np.asarray(self.outer, dtype=float)
        if y.ndim != 1 or not np.all(np.isfinite(y)) or np.any(y < 0) or np.any(y > 1):
            raise ValueError("outer activations must be a vector with entries in [0, 1]")
        n = y.shape[0]
        if len(self.inners) != n or len(self.interlayer_input) != n:
            raise ValueError("state needs one inner vector and one signal vector per node")
        zs, ils = [], []
        for i in range(n):
            z = np.asarray(self.inners[i], dtype=float)
            g = np.asarray(self.interlayer_input[i], dtype=float)
            if z.ndim != 1 or not np.all(np.isfinite(z)) or np.any(z < 0) or np.any(z > 1):
                raise ValueError(f"inners[{i}] entries must lie in [0, 1]")
            if g.shape != z.shape or not np.all(np.isfinite(g)):
                raise ValueError(f"interlayer_input[{i}] must be finite with shape {z.shape}")
            z.flags.writeable = False
            g.flags.writeable = False
            zs.append(z)
            ils.append(g)
        y = y.copy()
        y.flags.writeable = False
        object.__setattr__(self, "outer", y)
        object.__setattr__(self, "inners", tuple(zs))
        object.__setattr__(self, "interlayer_input", tuple(ils))


def aggregate(values, kind: Aggregation) -> float:
    """Collapse an inner activation vector to a scalar for the up path."""
    vals = [float(v) for v in values]
    if not vals:
        raise ValueError("cannot aggregate an empty vector")
    if kind is Aggregation.MEAN:
        return exact_sum(vals) / len(vals)
    if kind is Aggregation.MAX:
        return max(vals)
    raise ValueError(f"unknown aggregation {kind!r}")


def interlayer_signal(m: Multiplex, inners: Sequence[np.ndarray]) -> tuple[np.ndarray, ...]:
    """Per-concept sideways input computed from the given inner activations."""
    terms: dict[tuple[int, int], list[float]] = {}
    for e in m.interlayer:
        terms.setdefault((e.dst_node, e.dst_concept), []).append(
            e.weight * float(inners[e.src_node][e.src_concept])
        )
    out = []
    for i in range(m.outer_n):
        g = np.zeros(m.inner[i].n)
        for c in range(m.inner[i].n):
            lst = terms.get((i, c))
            if lst:
                g[c] = exact_sum(lst)
        out.append(g)
    return tuple(out)


def initial_state(m: Multiplex, outer, inners) -> MultiplexState:
    """Bundle validated activations into a state, deriving the signal."""
    y = check_activations(outer, m.outer_n, "outer")
    zs = []
    for i in range(m.outer_n):
        zs.append(check_activations(inners[i], m.inner[i].n, f"inners[{i}]"))
    return MultiplexState(y, tuple(zs), interlayer_signal(m, zs))


def inner_update(m: Multiplex, s: MultiplexState, i: int) -> np.ndarray:
    """Advance the inner map of node i by one step.

    Pre-activation per concept: own-map drive plus external input plus
    down-coupled outer activation plus the stored sideways signal, all
    in one fsum so absent couplings contribute exact zeros.
    """
    if not (0 <= i < m.outer_n):
        raise ValueError(f"node index {i} out of range")
    f = m.inner[i]
    z = s.inners[i]
    prods = z[:, None] * f.weights
    coup = m.down_coupling[i]
    y = float(s.outer[i])
    g = s.interlayer_input[i]
    out = np.empty(f.n)
    for c in range(f.n):
        pre = exact_sum([*prods[:, c], f.external_input[c], coup[c] * y, g[c]])
        out[c] = m.squash.value(pre)
    return out


def outer_update(m: Multiplex, s: MultiplexState, new_inners: Sequence[np.ndarray]) -> np.ndarray:
    """Advance the outer layer using the freshly updated inner maps."""
    y = s.outer
    prods = y[:, None] * m.outer_weights
    out = np.empty(m.outer_n)
    for i in range(m.outer_n):
        up = aggregate(new_inners[i], m.up_aggregation[i])
        pre = exact_sum([*prods[:, i], m.outer_bias[i], up])
        out[i] = m.squash.value(pre)
    return out


def multiplex_step(m: Multiplex, s: MultiplexState) -> MultiplexState:
    """One synchronous step: all inner maps first, then the outer layer."""
    new_inners = tuple(inner_update(m, s, i) for i in range(m.outer_n))
    new_outer = outer_update(m, s, new_inners)
    return MultiplexState(new_outer, new_inners, interlayer_signal(m, new_inners))


def _flatten(s: MultiplexState) -> np.ndarray:
    return np.concatenate([s.outer, *s.inners])


def multiplex_run(
    m: Multiplex,
    s0: MultiplexState,
    max_steps: int = 100,
    tol: float = 1e-6,
) -> tuple[MultiplexState, RunStatus, int]:
    """Iterate multiplex_step with the same termination rules as fcm_run.

    Convergence is measured on the concatenation of outer and all inner
    activations.
    """
    if max_steps < 0:
        raise ValueError("max_steps must be >= 0")
    if not (tol > 0.0):
        raise ValueError("tol must be > 0")
    if max_steps == 0:
        return s0, RunStatus.BUDGET_EXHAUSTED, 0
    s = s0
    cur = _flatten(s)
    history = [cur]
    for k in range(1, max_steps + 1):
        s = multiplex_step(m, s)
        nxt = _flatten(s)
        if float(np.max(np.abs(nxt - cur))) < tol:
            return s, RunStatus.FIXPOINT, k
        for old in history[:-1]:
            if float(np.max(np.abs(nxt - old))) < tol:
                return s, RunStatus.CYCLE, k
        history.append(nxt)
        cur = nxt
    return s, RunStatus.BUDGET_EXHAUSTED, max_steps


def relabel_nodes(m: Multiplex, order: Sequence[int]) -> Multiplex:
    """Permute node identities: new node a is old node order[a]."""
    n = m.outer_n
    perm = list(order)
    if sorted(perm) != list(range(n)):
        raise ValueError(f"order must be a permutation of 0..{n - 1}")
    idx = np.asarray(perm)
    inv = {old: new for new, old in enumerate(perm)}
    edges = tuple(
        InterlayerEdge(inv[e.src_node], e.src_concept, inv[e.dst_node], e.dst_concept, e.weight)
        for e in m.interlayer
    )
    return Multiplex(
        outer_weights=m.outer_weights[np.ix_(idx, idx)],
        outer_bias=m.outer_bias[idx],
        inner=tuple(m.inner[j] for j in perm),
        down_coupling=tuple(m.down_coupling[j] for j in perm),
        up_aggregation=tuple(m.up_aggregation[j] for j in perm),
        interlayer=edges,
        squash=m.squash,
    )


def relabel_state(s: MultiplexState, order: Sequence[int]) -> MultiplexState:
    """Apply the same node permutation to a state."""
    n = s.outer.shape[0]
    perm = list(order)
    if sorted(perm) != list(range(n)):
        raise ValueError(f"order must be a permutation of 0..{n - 1}")
    idx = np.asarray(perm)
    return MultiplexState(
        s.outer[idx],
        tuple(s.inners[j] for j in perm),
        tuple(s.interlayer_input[j] for j in perm),
    )
