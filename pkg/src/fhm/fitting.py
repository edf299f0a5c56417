"""Loss, gradients, projected descent and interval propagation.

The model is unrolled for a fixed number of settle steps from the
scenario's initial state, metric readouts are taken from the settled
inner activations, and the loss is

    total = fit + beta * align
    fit   = 1/2 sum_(i,k) (readout[i][k] - target[i][k])^2
    align = 1/2 sum_i r_i^2

with r_i the node-level consistency residual (see residual_eq2): outer
activation u, inner aggregate v and summed sideways input z of node i
should satisfy (v+1)(u+1) + 2z = sum_k target[i][k] at the settled
state.

Gradients are computed by hand with reverse accumulation through the
unrolled dynamics; no autodiff dependency.  Weight-typed parameters
(outer weights, inner weights, couplings, interlayer weights) are
projected back to [-1, 1] after every step; biases and external inputs
are unconstrained.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Callable, Sequence

import numpy as np

from .core import FuzzyInterval, exact_sum, interval_hull
from .fcm import Fcm, fcm_step
from .multiplex import (
    Aggregation,
    InterlayerEdge,
    Multiplex,
    MultiplexState,
    aggregate,
    initial_state,
    multiplex_step,
)
from .scenarios import Scenario

__all__ = [
    "FitConfig",
    "FitStatus",
    "FitResult",
    "FitNumericalError",
    "LossBreakdown",
    "residual_eq2",
    "residual_eq2_grad",
    "loss",
    "loss_grad",
    "fit",
    "multiplex_params",
    "with_params",
    "param_bounds_mask",
    "readout_values",
    "settle",
    "flat_readout_map",
    "embed_flat",
    "flat_loss",
    "flat_loss_grad",
    "fit_flat",
    "interval_schedule",
    "propagate_intervals",
]


class FitStatus(Enum):
    CONVERGED = "converged"
    BUDGET_EXHAUSTED = "budget_exhausted"


class FitNumericalError(ArithmeticError):
    """Loss or gradient went non-finite during fitting."""

    def __init__(self, iteration: int):
        self.iteration = iteration
        super().__init__(f"non-finite loss or gradient at iteration {iteration}")


@dataclass(frozen=True)
class FitConfig:
    settle_steps: int = 8
    max_iters: int = 500
    step_size: float = 0.25
    grad_tol: float = 1e-5
    beta: float = 0.1
    seed: int = 0

    def __post_init__(self) -> None:
        if self.settle_steps < 1:
            raise ValueError("settle_steps must be >= 1")
        if self.max_iters < 0:
            raise ValueError("max_iters must be >= 0")
        if not (self.step_size > 0.0 and math.isfinite(self.step_size)):
            raise ValueError("step_size must be finite and > 0")
        if not (self.grad_tol > 0.0 and math.isfinite(self.grad_tol)):
            raise ValueError("grad_tol must be finite and > 0")
        if not (self.beta >= 0.0 and math.isfinite(self.beta)):
            raise ValueError("beta must be finite and >= 0")


@dataclass(frozen=True)
class LossBreakdown:
    total: float
    fit_term: float
    align_term: float


@dataclass(frozen=True)
class FitResult:
    fitted: Multiplex
    loss_trace: tuple[float, ...]
    final_state: MultiplexState
    status: FitStatus
    iterations: int


def residual_eq2(u: float, v: float, z: float, target_sum: float) -> float:
    """Consistency residual (v+1)(u+1) + 2z - target_sum.

    u is the node's outer activation, v the aggregate of its inner
    activations, z its total sideways input.
    """
    for name, val in (("u", u), ("v", v), ("z", z), ("target_sum", target_sum)):
        if not math.isfinite(float(val)):
            raise ValueError(f"residual_eq2 argument {name} must be finite")
    return (v + 1.0) * (u + 1.0) + 2.0 * z - target_sum


def residual_eq2_grad(u: float, v: float, z: float, target_sum: float) -> tuple[float, float, float]:
    """(d/du, d/dv, d/dz) of residual_eq2."""
    residual_eq2(u, v, z, target_sum)  # reuse the finiteness checks
    return (v + 1.0, u + 1.0, 2.0)


# ---------------------------------------------------------------------------
# parameter packing

def multiplex_params(m: Multiplex) -> np.ndarray:
    """Flatten all trainable parameters into one vector.

    Order: outer weights (row major), outer bias, then per node inner
    weights (row major), external input, coupling, then interlayer
    weights in edge order.
    """
    parts = [m.outer_weights.ravel(), m.outer_bias]
    for i in range(m.outer_n):
        parts.append(m.inner[i].weights.ravel())
        parts.append(m.inner[i].external_input)
        parts.append(m.down_coupling[i])
    if m.interlayer:
        parts.append(np.array([e.weight for e in m.interlayer]))
    return np.concatenate(parts)


def param_bounds_mask(m: Multiplex) -> np.ndarray:
    """True where the parameter is weight-typed and confined to [-1, 1]."""
    n = m.outer_n
    parts = [np.ones(n * n, dtype=bool), np.zeros(n, dtype=bool)]
    for i in range(n):
        k = m.inner[i].n
        parts.append(np.ones(k * k, dtype=bool))
        parts.append(np.zeros(k, dtype=bool))
        parts.append(np.ones(k, dtype=bool))
    if m.interlayer:
        parts.append(np.ones(len(m.interlayer), dtype=bool))
    return np.concatenate(parts)


def with_params(m: Multiplex, vec: np.ndarray) -> Multiplex:
    """Rebuild a multiplex with the same topology and new parameters."""
    n = m.outer_n
    vec = np.asarray(vec, dtype=float)
    pos = 0

    def take(count: int) -> np.ndarray:
        nonlocal pos
        out = vec[pos:pos + count]
        pos += count
        return out

    v = take(n * n).reshape(n, n)
    b = take(n)
    inner, coup = [], []
    for i in range(n):
        k = m.inner[i].n
        w = take(k * k).reshape(k, k)
        x = take(k)
        c = take(k)
        inner.append(Fcm(w, x, m.inner[i].squash))
        coup.append(c)
    edges = m.interlayer
    if edges:
        ws = take(len(edges))
        edges = tuple(
            InterlayerEdge(e.src_node, e.src_concept, e.dst_node, e.dst_concept, float(w))
            for e, w in zip(edges, ws)
        )
    if pos != vec.size:
        raise ValueError(f"parameter vector has {vec.size} entries, expected {pos}")
    return Multiplex(
        outer_weights=v,
        outer_bias=b,
        inner=tuple(inner),
        down_coupling=tuple(coup),
        up_aggregation=m.up_aggregation,
        interlayer=edges,
        squash=m.squash,
    )


# ---------------------------------------------------------------------------
# forward evaluation

def readout_values(state: MultiplexState, readout_map: Sequence[Sequence[int]]) -> np.ndarray:
    """Per-node metric matrix read off the inner activations."""
    n = len(readout_map)
    if len(state.inners) != n:
        raise ValueError("readout_map must have one row per node")
    k = len(readout_map[0])
    out = np.empty((n, k))
    for i, row in enumerate(readout_map):
        if len(row) != k:
            raise ValueError("readout_map rows must have equal length")
        for j, c in enumerate(row):
            if not (0 <= c < state.inners[i].size):
                raise ValueError(f"readout_map[{i}][{j}] out of range")
            out[i, j] = state.inners[i][c]
    return out


def settle(m: Multiplex, scenario: Scenario, cfg: FitConfig) -> MultiplexState:
    """Unroll the dynamics for cfg.settle_steps from the scenario start."""
    s = initial_state(m, scenario.initial_outer, scenario.initial_inners)
    for _ in range(cfg.settle_steps):
        s = multiplex_step(m, s)
    return s


def _unrolled(m: Multiplex, scenario: Scenario, steps: int) -> list[MultiplexState]:
    states = [initial_state(m, scenario.initial_outer, scenario.initial_inners)]
    for _ in range(steps):
        states.append(multiplex_step(m, states[-1]))
    return states


def _as_batch(scenario) -> tuple[Scenario, ...]:
    if isinstance(scenario, Scenario):
        return (scenario,)
    batch = tuple(scenario)
    if not batch or not all(isinstance(s, Scenario) for s in batch):
        raise ValueError("expected a Scenario or a non-empty sequence of Scenario")
    return batch


def _loss_single(m: Multiplex, scenario: Scenario, cfg: FitConfig) -> LossBreakdown:
    sT = settle(m, scenario, cfg)
    r = readout_values(sT, scenario.readout_map)
    diffs = (r - scenario.targets).ravel()
    fit_term = 0.5 * exact_sum([d * d for d in diffs])
    residuals = []
    for i in range(m.outer_n):
        u = float(sT.outer[i])
        v = aggregate(sT.inners[i], m.up_aggregation[i])
        z = exact_sum(sT.interlayer_input[i])
        residuals.append(residual_eq2(u, v, z, exact_sum(scenario.targets[i])))
    align_term = 0.5 * exact_sum([r2 * r2 for r2 in residuals])
    return LossBreakdown(fit_term + cfg.beta * align_term, fit_term, align_term)


def loss(m: Multiplex, scenario, cfg: FitConfig) -> LossBreakdown:
    """Total, fit and alignment loss on a scenario or scenario batch."""
    parts = [_loss_single(m, s, cfg) for s in _as_batch(scenario)]
    return LossBreakdown(
        exact_sum([p.total for p in parts]),
        exact_sum([p.fit_term for p in parts]),
        exact_sum([p.align_term for p in parts]),
    )


# ---------------------------------------------------------------------------
# reverse accumulation

def _sigma_slope(lam: float, s: np.ndarray) -> np.ndarray:
    # derivative of sigma(lam * pre) with respect to pre, given s = sigma(...)
    return lam * s * (1.0 - s)


def _spread_aggregate(kind: Aggregation, values: np.ndarray, upstream: float) -> np.ndarray:
    out = np.zeros_like(values)
    if kind is Aggregation.MEAN:
        out += upstream / values.size
    else:
        # ties resolve to the first maximum, matching aggregate()
        out[int(np.argmax(values))] = upstream
    return out


def _grad_single(m: Multiplex, scenario: Scenario, cfg: FitConfig) -> np.ndarray:
    n = m.outer_n
    lam = m.squash.steepness
    states = _unrolled(m, scenario, cfg.settle_steps)
    sT = states[-1]

    dV = np.zeros((n, n))
    db = np.zeros(n)
    dW = [np.zeros((f.n, f.n)) for f in m.inner]
    dx = [np.zeros(f.n) for f in m.inner]
    dc = [np.zeros(f.n) for f in m.inner]
    dE = np.zeros(len(m.interlayer))

    # adjoints at the settled state
    dY = np.zeros(n)
    dz = [np.zeros(f.n) for f in m.inner]
    dg = [np.zeros(f.n) for f in m.inner]

    r = readout_values(sT, scenario.readout_map)
    for i in range(n):
        for k, c in enumerate(scenario.readout_map[i]):
            dz[i][c] += r[i, k] - scenario.targets[i, k]

    if cfg.beta != 0.0:
        for i in range(n):
            u = float(sT.outer[i])
            v = aggregate(sT.inners[i], m.up_aggregation[i])
            zsum = exact_sum(sT.interlayer_input[i])
            res = residual_eq2(u, v, zsum, exact_sum(scenario.targets[i]))
            du, dv, dzeta = residual_eq2_grad(u, v, zsum, 0.0)
            w = cfg.beta * res
            dY[i] += w * du
            dz[i] += _spread_aggregate(m.up_aggregation[i], sT.inners[i], w * dv)
            dg[i] += w * dzeta

    for t in range(cfg.settle_steps, 0, -1):
        prev, cur = states[t - 1], states[t]

        # sideways signal at time t is linear in z_t and the edge weights
        for idx, e in enumerate(m.interlayer):
            up = dg[e.dst_node][e.dst_concept]
            if up != 0.0:
                dE[idx] += up * cur.inners[e.src_node][e.src_concept]
                dz[e.src_node][e.src_concept] += up * e.weight

        # outer layer: Y_t from Y_{t-1} and the fresh inner aggregate
        dpo = dY * _sigma_slope(lam, cur.outer)
        dV += np.outer(prev.outer, dpo)
        db += dpo
        dY_prev = m.outer_weights @ dpo
        for i in range(n):
            dz[i] += _spread_aggregate(m.up_aggregation[i], cur.inners[i], dpo[i])

        # inner layers: z_t from z_{t-1}, Y_{t-1} and g_{t-1}
        dz_prev = []
        dg_prev = []
        for i in range(n):
            f = m.inner[i]
            dpi = dz[i] * _sigma_slope(lam, cur.inners[i])
            dW[i] += np.outer(prev.inners[i], dpi)
            dx[i] += dpi
            dc[i] += dpi * prev.outer[i]
            dY_prev[i] += float(np.dot(m.down_coupling[i], dpi))
            dz_prev.append(f.weights @ dpi)
            dg_prev.append(dpi)

        dY = dY_prev
        dz = dz_prev
        dg = dg_prev

    # the signal at t=0 is built from the (constant) initial inner
    # activations but still depends on the edge weights
    for idx, e in enumerate(m.interlayer):
        up = dg[e.dst_node][e.dst_concept]
        if up != 0.0:
            dE[idx] += up * states[0].inners[e.src_node][e.src_concept]

    parts = [dV.ravel(), db]
    for i in range(n):
        parts.extend([dW[i].ravel(), dx[i], dc[i]])
    if m.interlayer:
        parts.append(dE)
    return np.concatenate(parts)


def loss_grad(m: Multiplex, scenario, cfg: FitConfig) -> np.ndarray:
    """Gradient of the total loss in multiplex_params order."""
    batch = _as_batch(scenario)
    g = _grad_single(m, batch[0], cfg)
    for s in batch[1:]:
        g = g + _grad_single(m, s, cfg)
    return g


# ---------------------------------------------------------------------------
# projected descent, shared by the multiplex and the flat baseline

def _project(vec: np.ndarray, mask: np.ndarray) -> np.ndarray:
    out = vec.copy()
    out[mask] = np.clip(out[mask], -1.0, 1.0)
    return out


def _descend(
    vec: np.ndarray,
    f: Callable[[np.ndarray], float],
    fg: Callable[[np.ndarray], tuple[float, np.ndarray]],
    mask: np.ndarray,
    cfg: FitConfig,
) -> tuple[np.ndarray, list[float], FitStatus, int]:
    total, g = fg(vec)
    if not (math.isfinite(total) and np.all(np.isfinite(g))):
        raise FitNumericalError(0)
    trace = [total]
    iters = 0
    status = FitStatus.BUDGET_EXHAUSTED
    while iters < cfg.max_iters:
        if float(np.max(np.abs(g), initial=0.0)) < cfg.grad_tol:
            status = FitStatus.CONVERGED
            break
        alpha = cfg.step_size
        accepted = False
        while alpha >= 1e-16:
            cand = _project(vec - alpha * g, mask)
            delta = cand - vec
            descent = float(np.dot(g, delta))
            if descent >= 0.0:
                break
            ct = f(cand)
            if math.isfinite(ct) and ct <= total + 1e-4 * descent:
                accepted = True
                break
            alpha *= 0.5
        if not accepted:
            # no productive step at any scale: treat as converged, the
            # iterate cannot be improved along the projected gradient
            status = FitStatus.CONVERGED
            break
        vec = cand
        iters += 1
        total, g = fg(vec)
        if not (math.isfinite(total) and np.all(np.isfinite(g))):
            raise FitNumericalError(iters)
        trace.append(total)
    return vec, trace, status, iters


def fit(m0: Multiplex, scenario: Scenario, cfg: FitConfig) -> FitResult:
    """Projected gradient descent on all trainable parameters.

    Each iteration starts its backtracking search at cfg.step_size and
    halves until the Armijo test (constant 1e-4) accepts; the loss
    trace (initial loss plus one entry per accepted step) is therefore
    non-increasing.  Stops once the gradient max-norm drops below
    grad_tol (converged) or the iteration budget runs out.
    """
    mask = param_bounds_mask(m0)

    def f(vec: np.ndarray) -> float:
        return loss(with_params(m0, vec), scenario, cfg).total

    def fg(vec: np.ndarray) -> tuple[float, np.ndarray]:
        m = with_params(m0, vec)
        return loss(m, scenario, cfg).total, loss_grad(m, scenario, cfg)

    vec, trace, status, iters = _descend(multiplex_params(m0), f, fg, mask, cfg)
    fitted = with_params(m0, vec)
    return FitResult(fitted, tuple(trace), settle(fitted, scenario, cfg), status, iters)


# ---------------------------------------------------------------------------
# flat single-map baseline

def flat_readout_map(scenario: Scenario) -> tuple[tuple[int, ...], ...]:
    """Readout indices into the concatenated concept space."""
    offsets = np.concatenate([[0], np.cumsum(scenario.inner_sizes)])
    return tuple(
        tuple(int(offsets[i]) + c for c in scenario.readout_map[i])
        for i in range(scenario.outer_n)
    )


def embed_flat(m: Multiplex) -> Fcm:
    """Block-diagonal single map holding every inner map of a multiplex."""
    sizes = m.inner_sizes
    total = sum(sizes)
    w = np.zeros((total, total))
    x = np.zeros(total)
    pos = 0
    for f in m.inner:
        w[pos:pos + f.n, pos:pos + f.n] = f.weights
        x[pos:pos + f.n] = f.external_input
        pos += f.n
    return Fcm(w, x, m.squash)


def _flat_unrolled(f: Fcm, z0: np.ndarray, steps: int) -> list[np.ndarray]:
    states = [z0]
    for _ in range(steps):
        states.append(fcm_step(f, states[-1]))
    return states


def flat_loss(f: Fcm, scenario: Scenario, cfg: FitConfig) -> float:
    """Fit term of the flat baseline (no hierarchy, no alignment)."""
    z0 = np.concatenate(scenario.initial_inners)
    if z0.size != f.n:
        raise ValueError("flat map size must match the scenario's total concept count")
    zT = _flat_unrolled(f, z0, cfg.settle_steps)[-1]
    gro = flat_readout_map(scenario)
    diffs = []
    for i in range(scenario.outer_n):
        for k, c in enumerate(gro[i]):
            diffs.append(zT[c] - scenario.targets[i, k])
    return 0.5 * exact_sum([d * d for d in diffs])


def flat_loss_grad(f: Fcm, scenario: Scenario, cfg: FitConfig) -> np.ndarray:
    """Gradient of flat_loss over [weights (row major), external input]."""
    lam = f.squash.steepness
    z0 = np.concatenate(scenario.initial_inners)
    states = _flat_unrolled(f, z0, cfg.settle_steps)
    zT = states[-1]
    gro = flat_readout_map(scenario)
    dz = np.zeros(f.n)
    for i in range(scenario.outer_n):
        for k, c in enumerate(gro[i]):
            dz[c] += zT[c] - scenario.targets[i, k]
    dW = np.zeros((f.n, f.n))
    dx = np.zeros(f.n)
    for t in range(cfg.settle_steps, 0, -1):
        cur, prev = states[t], states[t - 1]
        dpre = dz * _sigma_slope(lam, cur)
        dW += np.outer(prev, dpre)
        dx += dpre
        dz = f.weights @ dpre
    return np.concatenate([dW.ravel(), dx])


def fit_flat(f0: Fcm, scenario: Scenario, cfg: FitConfig) -> tuple[Fcm, tuple[float, ...], FitStatus, int]:
    """Projected descent for the flat baseline, same optimizer settings."""
    n = f0.n
    mask = np.concatenate([np.ones(n * n, dtype=bool), np.zeros(n, dtype=bool)])

    def rebuild(vec: np.ndarray) -> Fcm:
        return Fcm(vec[:n * n].reshape(n, n), vec[n * n:], f0.squash)

    def f(vec: np.ndarray) -> float:
        return flat_loss(rebuild(vec), scenario, cfg)

    def fg(vec: np.ndarray) -> tuple[float, np.ndarray]:
        m = rebuild(vec)
        return flat_loss(m, scenario, cfg), flat_loss_grad(m, scenario, cfg)

    vec0 = np.concatenate([f0.weights.ravel(), f0.external_input])
    vec, trace, status, iters = _descend(vec0, f, fg, mask, cfg)
    return rebuild(vec), tuple(trace), status, iters


# ---------------------------------------------------------------------------
# interval propagation

def interval_schedule(
    inputs: Sequence[Sequence[FuzzyInterval]],
    seed: int,
    budget: int,
) -> list[np.ndarray]:
    """Deterministic input assignments evaluated by propagate_intervals.

    Flattened over (node, concept) in order.  The schedule starts with
    the all-lower corner, the all-upper corner and (budget permitting)
    the midpoint, then distinct interval vertices sampled by seed, then
    interior points drawn uniformly per dimension.  Duplicate
    assignments are skipped, so crisp inputs cost a single evaluation.
    """
    if budget < 1:
        raise ValueError("budget must be >= 1")
    flat = [iv for row in inputs for iv in row]
    lo = np.array([iv.lo for iv in flat])
    hi = np.array([iv.hi for iv in flat])
    free = np.array([not iv.is_degenerate for iv in flat])
    d = int(np.count_nonzero(free))

    rng = np.random.default_rng(seed)
    schedule: list[np.ndarray] = []
    seen: set[bytes] = set()

    def push(vec: np.ndarray) -> None:
        key = vec.tobytes()
        if key not in seen:
            seen.add(key)
            schedule.append(vec)

    push(lo.copy())
    if len(schedule) < budget:
        push(hi.copy())
    if budget >= 3 and len(schedule) < budget:
        push(0.5 * (lo + hi))

    if d > 0:
        want_vertices = min(budget - len(schedule), 2 ** d) if budget > len(schedule) else 0
        if want_vertices > 0:
            if d <= 16:
                codes = rng.permutation(2 ** d)
                picked = 0
                for code in codes:
                    if picked >= want_vertices:
                        break
                    bits = (code >> np.arange(d)) & 1
                    vec = lo.copy()
                    vec[free] = np.where(bits == 1, hi[free], lo[free])
                    before = len(schedule)
                    push(vec)
                    picked += len(schedule) - before
            else:
                attempts = 0
                picked = 0
                while picked < want_vertices and attempts < 50 * want_vertices:
                    bits = rng.integers(0, 2, d)
                    vec = lo.copy()
                    vec[free] = np.where(bits == 1, hi[free], lo[free])
                    before = len(schedule)
                    push(vec)
                    picked += len(schedule) - before
                    attempts += 1

    while len(schedule) < budget:
        vec = lo.copy()
        vec[free] = rng.uniform(lo[free], hi[free])
        before = len(schedule)
        push(vec)
        if len(schedule) == before and not np.any(free):
            break  # fully degenerate inputs admit only one point
    return schedule


def propagate_intervals(
    m: Multiplex,
    inputs: Sequence[Sequence[FuzzyInterval]],
    cfg: FitConfig,
    budget: int = 64,
    *,
    base_state: MultiplexState,
    readout_map: Sequence[Sequence[int]],
) -> tuple[tuple[FuzzyInterval, ...], ...]:
    """Per-node, per-metric output hulls under interval-valued inputs.

    Each scheduled assignment replaces the inner activations, keeps the
    outer start from base_state, settles for cfg.settle_steps and reads
    the metrics; the reported interval per (node, metric) is the hull
    of the sampled readouts.  Degenerate inputs reproduce the crisp run
    exactly.
    """
    if budget < 2:
        raise ValueError("budget must be >= 2")
    if len(inputs) != m.outer_n:
        raise ValueError("inputs must have one row per node")
    for i, row in enumerate(inputs):
        if len(row) != m.inner[i].n:
            raise ValueError(f"inputs[{i}] must have one interval per concept")
    sizes = m.inner_sizes
    samples = []
    for vec in interval_schedule(inputs, cfg.seed, budget):
        pos = 0
        inners = []
        for k in sizes:
            inners.append(vec[pos:pos + k])
            pos += k
        s = initial_state(m, base_state.outer, inners)
        for _ in range(cfg.settle_steps):
            s = multiplex_step(m, s)
        samples.append(readout_values(s, readout_map))
    stacked = np.stack(samples)
    n, k = stacked.shape[1], stacked.shape[2]
    return tuple(
        tuple(interval_hull(stacked[:, i, j]) for j in range(k))
        for i in range(n)
    )
