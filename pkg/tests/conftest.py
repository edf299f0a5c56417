"""Shared builders and a straight-line reference stepper.

The reference stepper reimplements the two-phase update with plain
Python loops so engine tests have something independent to agree with,
bit for bit.
"""

import math

import numpy as np

from fhm.core import SquashingFunction
from fhm.fcm import Fcm
from fhm.multiplex import (
    Aggregation,
    InterlayerEdge,
    Multiplex,
    MultiplexState,
    initial_state,
)


def random_multiplex(rng, outer_n, inner_sizes=None, steepness=1.0,
                     n_edges=0, aggregations=None):
    """Random valid multiplex with weights in [-1, 1]."""
    if inner_sizes is None:
        inner_sizes = [int(rng.integers(1, 4)) for _ in range(outer_n)]
    inner = tuple(
        Fcm(rng.uniform(-1, 1, (k, k)), rng.uniform(-1, 1, k),
            SquashingFunction(steepness=steepness))
        for k in inner_sizes
    )
    coup = tuple(rng.uniform(-1, 1, k) for k in inner_sizes)
    if aggregations is None:
        aggregations = tuple(
            Aggregation.MEAN if rng.random() < 0.7 else Aggregation.MAX
            for _ in range(outer_n)
        )
    edges = []
    if n_edges and outer_n >= 2:
        for _ in range(n_edges):
            src = int(rng.integers(0, outer_n))
            dst = int(rng.integers(0, outer_n))
            if src == dst:
                dst = (src + 1) % outer_n
            edges.append(InterlayerEdge(
                src, int(rng.integers(0, inner_sizes[src])),
                dst, int(rng.integers(0, inner_sizes[dst])),
                float(rng.uniform(-1, 1)),
            ))
    return Multiplex(
        outer_weights=rng.uniform(-1, 1, (outer_n, outer_n)),
        outer_bias=rng.uniform(-1, 1, outer_n),
        inner=inner,
        down_coupling=coup,
        up_aggregation=tuple(aggregations),
        interlayer=tuple(edges),
        squash=SquashingFunction(steepness=steepness),
    )


def random_state(rng, m):
    return initial_state(
        m,
        rng.uniform(0, 1, m.outer_n),
        [rng.uniform(0, 1, f.n) for f in m.inner],
    )


def _sigma(steepness, x):
    t = steepness * x
    if t >= 0.0:
        return 1.0 / (1.0 + math.exp(-t))
    e = math.exp(t)
    return e / (1.0 + e)


def reference_step(m, s):
    """Plain-loop reimplementation of one multiplex step."""
    n = m.outer_n
    lam = m.squash.steepness
    new_inners = []
    for i in range(n):
        f = m.inner[i]
        z = [float(v) for v in s.inners[i]]
        out = []
        for c in range(f.n):
            terms = [z[d] * float(f.weights[d, c]) for d in range(f.n)]
            terms.append(float(f.external_input[c]))
            terms.append(float(m.down_coupling[i][c]) * float(s.outer[i]))
            terms.append(float(s.interlayer_input[i][c]))
            out.append(_sigma(lam, math.fsum(terms)))
        new_inners.append(out)
    new_outer = []
    for i in range(n):
        if m.up_aggregation[i] is Aggregation.MEAN:
            up = math.fsum(new_inners[i]) / len(new_inners[i])
        else:
            up = max(new_inners[i])
        terms = [float(s.outer[j]) * float(m.outer_weights[j, i]) for j in range(n)]
        terms.append(float(m.outer_bias[i]))
        terms.append(up)
        new_outer.append(_sigma(lam, math.fsum(terms)))
    signal = [[0.0] * m.inner[i].n for i in range(n)]
    groups = {}
    for e in m.interlayer:
        groups.setdefault((e.dst_node, e.dst_concept), []).append(
            e.weight * new_inners[e.src_node][e.src_concept]
        )
    for (i, c), lst in groups.items():
        signal[i][c] = math.fsum(lst)
    return MultiplexState(
        np.array(new_outer),
        tuple(np.array(v) for v in new_inners),
        tuple(np.array(v) for v in signal),
    )
