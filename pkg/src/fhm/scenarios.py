"""Service scenarios: generated targets, persistence, seeded models.

A scenario bundles everything a fitting run needs: per-node metric
targets, the readout map saying which inner concept reports which
metric, interval-valued inputs for the inner concepts, and initial
activations for both layers.

Generated targets follow a single-queue sketch per node: arrival rate
a ~ U(0.1, 0.9), capacity c = a + U(0.1, 1.0), then

    utilization = a / c
    wait        = (a / (c * (c - a))) / cohort max
    throughput  = a / cohort max
    patience    ~ U(0.5, 0.9)

Wait and throughput are normalized by their cohort-wide maxima so each
lands in (0, 1].
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from .core import FuzzyInterval
from .fcm import Fcm
from .multiplex import Aggregation, Multiplex

__all__ = [
    "Scenario",
    "ScenarioFormatError",
    "ScenarioValidationError",
    "DEFAULT_METRIC_NAMES",
    "generate_scenario",
    "fuzzify",
    "save_scenario",
    "load_scenario",
    "initial_multiplex",
]

DEFAULT_METRIC_NAMES = ("wait", "throughput", "utilization", "patience")


class ScenarioFormatError(ValueError):
    """Document cannot be parsed or is structurally wrong."""


class ScenarioValidationError(ValueError):
    """Document parses but holds out-of-range or inconsistent values."""


@dataclass(frozen=True)
class Scenario:
    name: str
    seed: int
    metric_names: tuple[str, ...]
    readout_map: tuple[tuple[int, ...], ...]
    inputs: tuple[tuple[FuzzyInterval, ...], ...]
    initial_outer: np.ndarray
    initial_inners: tuple[np.ndarray, ...]
    targets: np.ndarray

    def __post_init__(self) -> None:
        n = len(self.readout_map)
        if n == 0:
            raise ValueError("scenario needs at least one node")
        k = len(self.metric_names)
        if k == 0:
            raise ValueError("scenario needs at least one metric")
        if len(self.inputs) != n or len(self.initial_inners) != n:
            raise ValueError("inputs and initial_inners must have one row per node")
        tg = np.asarray(self.targets, dtype=float)
        if tg.shape != (n, k):
            raise ValueError(f"targets must have shape ({n}, {k}), got {tg.shape}")
        if not np.all(np.isfinite(tg)) or np.any(tg < 0) or np.any(tg > 1):
            raise ValueError("targets must lie in [0, 1]")
        y0 = np.asarray(self.initial_outer, dtype=float)
        if y0.shape != (n,) or not np.all(np.isfinite(y0)) or np.any(y0 < 0) or np.any(y0 > 1):
            raise ValueError("initial_outer must be per-node values in [0, 1]")
        inners = []
        for i in range(n):
            z = np.asarray(self.initial_inners[i], dtype=float)
            if z.ndim != 1 or z.size == 0:
                raise ValueError(f"initial_inners[{i}] must be a non-empty vector")
            if not np.all(np.isfinite(z)) or np.any(z < 0) or np.any(z > 1):
                raise ValueError(f"initial_inners[{i}] must lie in [0, 1]")
            if len(self.inputs[i]) != z.size:
                raise ValueError(f"inputs[{i}] must have one interval per concept")
            if not all(isinstance(v, FuzzyInterval) for v in self.inputs[i]):
                raise ValueError(f"inputs[{i}] must contain FuzzyInterval values")
            if len(self.readout_map[i]) != k:
                raise ValueError(f"readout_map[{i}] must list one concept per metric")
            if any(not (0 <= c < z.size) for c in self.readout_map[i]):
                raise ValueError(f"readout_map[{i}] references a concept out of range")
            z = z.copy()
            z.flags.writeable = False
            inners.append(z)
        tg = tg.copy()
        tg.flags.writeable = False
        y0 = y0.copy()
        y0.flags.writeable = False
        object.__setattr__(self, "metric_names", tuple(self.metric_names))
        object.__setattr__(self, "readout_map", tuple(tuple(r) for r in self.readout_map))
        object.__setattr__(self, "inputs", tuple(tuple(r) for r in self.inputs))
        object.__setattr__(self, "initial_outer", y0)
        object.__setattr__(self, "initial_inners", tuple(inners))
        object.__setattr__(self, "targets", tg)

    @property
    def outer_n(self) -> int:
        return len(self.readout_map)

    @property
    def inner_sizes(self) -> tuple[int, ...]:
        return tuple(z.size for z in self.initial_inners)

    @property
    def metric_count(self) -> int:
        return len(self.metric_names)


def _metric_names(metric_count: int) -> tuple[str, ...]:
    if metric_count <= 4:
        return DEFAULT_METRIC_NAMES[:metric_count]
    extra = tuple(f"metric{k}" for k in range(4, metric_count))
    return DEFAULT_METRIC_NAMES + extra


def generate_scenario(
    seed: int,
    outer_n: int = 5,
    inner_n: int = 4,
    metric_count: int = 4,
) -> Scenario:
    """Deterministic scenario from a seed.

    Every node gets inner_n concepts; metric k reads concept k, which
    is why metric_count may not exceed inner_n.  Initial inner
    activations sit near the matching targets with +-0.1 uniform noise
    (clamped), the outer start near the per-node target mean.  Inputs
    are degenerate intervals at the initial inner activations.
    """
    if outer_n < 1:
        raise ValueError("outer_n must be >= 1")
    if inner_n < 1:
        raise ValueError("inner_n must be >= 1")
    if not (1 <= metric_count <= inner_n):
        raise ValueError(
            f"metric_count must satisfy 1 <= metric_count <= inner_n, "
            f"got metric_count={metric_count} with inner_n={inner_n}"
        )
    rng = np.random.default_rng(seed)
    arrival = rng.uniform(0.1, 0.9, outer_n)
    capacity = arrival + rng.uniform(0.1, 1.0, outer_n)
    patience = rng.uniform(0.5, 0.9, outer_n)
    n_extra = max(0, metric_count - 4)
    extras = rng.uniform(0.1, 0.9, (outer_n, n_extra)) if n_extra else None

    utilization = arrival / capacity
    wait_raw = arrival / (capacity * (capacity - arrival))
    wait = wait_raw / np.max(wait_raw)
    throughput = arrival / np.max(arrival)

    columns = {"wait": wait, "throughput": throughput,
               "utilization": utilization, "patience": patience}
    names = _metric_names(metric_count)
    cols = []
    for k, name in enumerate(names):
        cols.append(columns[name] if name in columns else extras[:, k - 4])
    targets = np.clip(np.column_stack(cols), 0.0, 1.0)

    inner_noise = rng.uniform(-0.1, 0.1, (outer_n, inner_n))
    outer_noise = rng.uniform(-0.1, 0.1, outer_n)
    z0 = np.empty((outer_n, inner_n))
    for i in range(outer_n):
        for c in range(inner_n):
            z0[i, c] = targets[i, c % metric_count] + inner_noise[i, c]
    z0 = np.clip(z0, 0.0, 1.0)
    y0 = np.clip(targets.mean(axis=1) + outer_noise, 0.0, 1.0)

    readout = tuple(tuple(range(metric_count)) for _ in range(outer_n))
    inputs = tuple(
        tuple(FuzzyInterval(z0[i, c], z0[i, c]) for c in range(inner_n))
        for i in range(outer_n)
    )
    return Scenario(
        name=f"scenario-{seed}",
        seed=int(seed),
        metric_names=names,
        readout_map=readout,
        inputs=inputs,
        initial_outer=y0,
        initial_inners=tuple(z0[i] for i in range(outer_n)),
        targets=targets,
    )


def fuzzify(scenario: Scenario, width: float) -> Scenario:
    """Widen every input interval by +-width, clamped to [0, 1]."""
    w = float(width)
    if not math.isfinite(w) or not (0.0 <= w <= 0.5):
        raise ValueError(f"width must lie in [0, 0.5], got {width!r}")
    inputs = tuple(
        tuple(FuzzyInterval(max(0.0, iv.lo - w), min(1.0, iv.hi + w)) for iv in row)
        for row in scenario.inputs
    )
    return replace(scenario, inputs=inputs)


def _scenario_payload(s: Scenario) -> dict:
    return {
        "name": s.name,
        "seed": s.seed,
        "metric_names": list(s.metric_names),
        "readout_map": [list(r) for r in s.readout_map],
        "inputs": [[[iv.lo, iv.hi] for iv in row] for row in s.inputs],
        "initial_state": {
            "outer": s.initial_outer.tolist(),
            "inners": [z.tolist() for z in s.initial_inners],
        },
        "targets": s.targets.tolist(),
    }


def save_scenario(s: Scenario, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(_scenario_payload(s), fh, indent=2, sort_keys=True)
        fh.write("\n")


def _need(doc: dict, key: str, kind, path: str):
    if key not in doc:
        raise ScenarioFormatError(f"missing field '{path}'")
    val = doc[key]
    if kind is float:
        if not isinstance(val, (int, float)) or isinstance(val, bool):
            raise ScenarioFormatError(f"field '{path}' must be a number")
        return float(val)
    if not isinstance(val, kind):
        raise ScenarioFormatError(f"field '{path}' has the wrong type")
    return val


def _number_row(row, path: str) -> list[float]:
    if not isinstance(row, list) or not row:
        raise ScenarioFormatError(f"field '{path}' must be a non-empty list of numbers")
    out = []
    for j, v in enumerate(row):
        if not isinstance(v, (int, float)) or isinstance(v, bool):
            raise ScenarioFormatError(f"field '{path}[{j}]' must be a number")
        out.append(float(v))
    return out


def _check_unit(vals: list[float], path: str) -> None:
    for j, v in enumerate(vals):
        if not math.isfinite(v) or v < 0.0 or v > 1.0:
            raise ScenarioValidationError(
                f"field '{path}[{j}]' must lie in [0, 1], got {v}"
            )


def load_scenario(path) -> Scenario:
    """Read a scenario document, reporting the offending field on error."""
    with open(path, "r", encoding="utf-8") as fh:
        text = fh.read()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise ScenarioFormatError(
            f"invalid JSON at line {e.lineno}, column {e.colno}: {e.msg}"
        ) from e
    if not isinstance(doc, dict):
        raise ScenarioFormatError("document root must be an object")

    name = _need(doc, "name", str, "name")
    seed = _need(doc, "seed", int, "seed")
    metric_names = _need(doc, "metric_names", list, "metric_names")
    if not metric_names or not all(isinstance(v, str) for v in metric_names):
        raise ScenarioFormatError("field 'metric_names' must be a non-empty list of strings")
    readout_doc = _need(doc, "readout_map", list, "readout_map")
    inputs_doc = _need(doc, "inputs", list, "inputs")
    state_doc = _need(doc, "initial_state", dict, "initial_state")
    outer_doc = _need(state_doc, "outer", list, "initial_state.outer")
    inners_doc = _need(state_doc, "inners", list, "initial_state.inners")
    targets_doc = _need(doc, "targets", list, "targets")

    n = len(readout_doc)
    if n == 0:
        raise ScenarioFormatError("field 'readout_map' must be non-empty")
    for field_name, rows in (("inputs", inputs_doc),
                             ("initial_state.inners", inners_doc),
                             ("targets", targets_doc)):
        if not isinstance(rows, list) or len(rows) != n:
            raise ScenarioFormatError(f"field '{field_name}' must have one row per node")
    if len(outer_doc) != n:
        raise ScenarioFormatError("field 'initial_state.outer' must have one value per node")

    readout = []
    for i, row in enumerate(readout_doc):
        if not isinstance(row, list) or len(row) != len(metric_names):
            raise ScenarioFormatError(
                f"field 'readout_map[{i}]' must list one concept per metric"
            )
        for j, v in enumerate(row):
            if not isinstance(v, int) or isinstance(v, bool):
                raise ScenarioFormatError(f"field 'readout_map[{i}][{j}]' must be an integer")
        readout.append(tuple(row))

    outer = _number_row(outer_doc, "initial_state.outer")
    _check_unit(outer, "initial_state.outer")

    inners, inputs = [], []
    for i in range(n):
        z = _number_row(inners_doc[i], f"initial_state.inners[{i}]")
        _check_unit(z, f"initial_state.inners[{i}]")
        inners.append(np.array(z))
        row = inputs_doc[i]
        if not isinstance(row, list) or len(row) != len(z):
            raise ScenarioFormatError(f"field 'inputs[{i}]' must have one interval per concept")
        ivs = []
        for c, pair in enumerate(row):
            vals = _number_row(pair, f"inputs[{i}][{c}]")
            if len(vals) != 2:
                raise ScenarioFormatError(f"field 'inputs[{i}][{c}]' must be a [lo, hi] pair")
            try:
                ivs.append(FuzzyInterval(vals[0], vals[1]))
            except ValueError as e:
                raise ScenarioValidationError(f"field 'inputs[{i}][{c}]': {e}") from e
        inputs.append(tuple(ivs))

    targets = []
    for i in range(n):
        row = _number_row(targets_doc[i], f"targets[{i}]")
        if len(row) != len(metric_names):
            raise ScenarioFormatError(f"field 'targets[{i}]' must have one value per metric")
        _check_unit(row, f"targets[{i}]")
        targets.append(row)

    for i in range(n):
        for j, c in enumerate(readout[i]):
            if not (0 <= c < inners[i].size):
                raise ScenarioValidationError(
                    f"field 'readout_map[{i}][{j}]' references concept {c}, "
                    f"but node {i} has {inners[i].size} concepts"
                )

    return Scenario(
        name=name,
        seed=int(seed),
        metric_names=tuple(metric_names),
        readout_map=tuple(readout),
        inputs=tuple(inputs),
        initial_outer=np.array(outer),
        initial_inners=tuple(inners),
        targets=np.array(targets),
    )


def initial_multiplex(
    scenario: Scenario,
    seed: int,
    zero_couplings: bool = False,
) -> Multiplex:
    """Seeded starting model over the scenario's topology.

    All trainable parameters are drawn uniform in [-0.5, 0.5] (outer
    weights, bias, inner weights, external inputs, couplings), mean
    aggregation everywhere, no interlayer edges.  zero_couplings swaps
    the coupling draw for exact zeros without disturbing the other
    draws, which keeps the rest of the model comparable across the two
    settings.
    """
    rng = np.random.default_rng(seed)
    n = scenario.outer_n
    v = rng.uniform(-0.5, 0.5, (n, n))
    b = rng.uniform(-0.5, 0.5, n)
    inner, coup = [], []
    for k in scenario.inner_sizes:
        w = rng.uniform(-0.5, 0.5, (k, k))
        x = rng.uniform(-0.5, 0.5, k)
        c = rng.uniform(-0.5, 0.5, k)
        if zero_couplings:
            c = np.zeros(k)
        inner.append(Fcm(w, x))
        coup.append(c)
    return Multiplex(
        outer_weights=v,
        outer_bias=b,
        inner=tuple(inner),
        down_coupling=tuple(coup),
        up_aggregation=(Aggregation.MEAN,) * n,
    )
