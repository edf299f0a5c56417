"""Per-node service metrics, contribution ranking, baseline comparison.

Contribution blends two signals on a 0..10 scale: how closely a node's
read-off metrics align with its targets, and how strongly the node is
wired into the outer graph (total absolute edge weight, normalized to
the cohort maximum).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from .core import exact_sum
from .fitting import (
    FitConfig,
    FitStatus,
    embed_flat,
    fit,
    fit_flat,
    flat_loss,
    loss,
    readout_values,
)
from .multiplex import Multiplex, MultiplexState
from .scenarios import Scenario, initial_multiplex

__all__ = [
    "NodeReport",
    "ComparisonResult",
    "metric_readout",
    "influence_scores",
    "contribution",
    "rank_nodes",
    "inner_entropy",
    "node_reports",
    "compare_fhm_fcm",
    "TIE_EPS",
]

TIE_EPS = 1e-9


def metric_readout(state: MultiplexState, readout_map: Sequence[Sequence[int]]) -> np.ndarray:
    """Matrix of metric values per node, read off the inner activations."""
    return readout_values(state, readout_map)


def influence_scores(m: Multiplex) -> np.ndarray:
    """Total absolute outer-edge weight per node, cohort-normalized.

    In- and out-edges both count, a self loop once.  All-zero outer
    graphs give zero influence everywhere.
    """
    v = np.abs(m.outer_weights)
    raw = v.sum(axis=1) + v.sum(axis=0) - np.diag(v)
    peak = float(raw.max())
    if peak == 0.0:
        return np.zeros(m.outer_n)
    return raw / peak


def contribution(metric_values, targets, influence: float, alpha: float = 0.5) -> float:
    """Blend of target alignment and structural influence on 0..10.

    alignment = mean over metrics of 1 - |value - target|; the result
    is 10 * (alpha * alignment + (1 - alpha) * influence).
    """
    mv = [float(v) for v in metric_values]
    tg = [float(v) for v in targets]
    if len(mv) != len(tg) or not mv:
        raise ValueError("metric values and targets must be equal-length and non-empty")
    for name, vals in (("metric values", mv), ("targets", tg)):
        if any(not (0.0 <= v <= 1.0) for v in vals):
            raise ValueError(f"{name} must lie in [0, 1]")
    if not (0.0 <= influence <= 1.0):
        raise ValueError("influence must lie in [0, 1]")
    if not (0.0 <= alpha <= 1.0):
        raise ValueError("alpha must lie in [0, 1]")
    alignment = exact_sum([1.0 - abs(a - b) for a, b in zip(mv, tg)]) / len(mv)
    return 10.0 * (alpha * alignment + (1.0 - alpha) * influence)


def rank_nodes(scores: Sequence[float]) -> list[int]:
    """Node indices by descending score; ties keep the lower index first."""
    vals = [float(v) for v in scores]
    if not vals:
        raise ValueError("cannot rank an empty score list")
    if any(not math.isfinite(v) for v in vals):
        raise ValueError("scores must be finite")
    return sorted(range(len(vals)), key=lambda i: (-vals[i], i))


def inner_entropy(activations) -> float:
    """Shannon entropy (nats) of the normalized activation vector.

    All-zero activations carry no information and give 0 by convention.
    """
    a = np.asarray(activations, dtype=float)
    if a.ndim != 1 or a.size == 0:
        raise ValueError("activations must be a non-empty vector")
    if not np.all(np.isfinite(a)) or np.any(a < 0.0) or np.any(a > 1.0):
        raise ValueError("activations must lie in [0, 1]")
    total = exact_sum(a)
    if total == 0.0:
        return 0.0
    p = a / total
    return -exact_sum([v * math.log(v) for v in p if v > 0.0])


@dataclass(frozen=True)
class NodeReport:
    node: int
    metric_values: tuple[float, ...]
    contribution: float
    entropy: float


def node_reports(
    m: Multiplex,
    state: MultiplexState,
    scenario: Scenario,
    alpha: float = 0.5,
) -> tuple[NodeReport, ...]:
    """Contribution and entropy for every node at the given state."""
    values = metric_readout(state, scenario.readout_map)
    infl = influence_scores(m)
    out = []
    for i in range(m.outer_n):
        out.append(NodeReport(
            node=i,
            metric_values=tuple(float(v) for v in values[i]),
            contribution=contribution(values[i], scenario.targets[i], float(infl[i]), alpha),
            entropy=inner_entropy(state.inners[i]),
        ))
    return tuple(out)


@dataclass(frozen=True)
class ComparisonResult:
    fhm_initial_loss: float
    fcm_initial_loss: float
    fhm_final_loss: float
    fcm_final_loss: float
    winner: str
    fhm_status: FitStatus
    fcm_status: FitStatus
    fhm_iterations: int
    fcm_iterations: int


def compare_fhm_fcm(scenario: Scenario, cfg: FitConfig) -> ComparisonResult:
    """Fit the hierarchy and a flat map of equal concept count head to head.

    Both start from the same seeded inner weights: the hierarchy with
    couplings zeroed, the flat map as its block-diagonal embedding, so
    the two initial losses coincide.  Both get the optimizer settings
    from cfg with beta forced to 0 and are judged on the pure fit term;
    final losses within 1e-9 of each other count as a tie.
    """
    pure = replace(cfg, beta=0.0)
    m0 = initial_multiplex(scenario, pure.seed, zero_couplings=True)
    f0 = embed_flat(m0)

    fhm_initial = loss(m0, scenario, pure).fit_term
    fcm_initial = flat_loss(f0, scenario, pure)

    fhm_res = fit(m0, scenario, pure)
    fhm_final = loss(fhm_res.fitted, scenario, pure).fit_term
    fcm_fitted, _, fcm_status, fcm_iters = fit_flat(f0, scenario, pure)
    fcm_final = flat_loss(fcm_fitted, scenario, pure)

    if abs(fhm_final - fcm_final) <= TIE_EPS:
        winner = "tie"
    elif fhm_final < fcm_final:
        winner = "fhm"
    else:
        winner = "fcm"
    return ComparisonResult(
        fhm_initial_loss=fhm_initial,
        fcm_initial_loss=fcm_initial,
        fhm_final_loss=fhm_final,
        fcm_final_loss=fcm_final,
        winner=winner,
        fhm_status=fhm_res.status,
        fcm_status=fcm_status,
        fhm_iterations=fhm_res.iterations,
        fcm_iterations=fcm_iters,
    )
