"""Batch command-line front end.

Subcommands: gen, fit, compare, report, intervals.  Every command is
deterministic given its flags: result payloads (JSON, CSV, PNG) carry
no timestamps, and the wall-clock duration goes to a separate
``<out>.timing.json`` sidecar so reruns stay byte-identical.

Exit codes: 0 success, 2 usage or validation error, 3 numerical
failure during fitting.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import sys
import time
from pathlib import Path

from . import __version__, plots
from .fitting import (
    FitConfig,
    FitNumericalError,
    loss,
    fit,
    propagate_intervals,
)
from .metrics import compare_fhm_fcm, node_reports, rank_nodes
from .multiplex import Multiplex, initial_state
from .scenarios import (
    ScenarioFormatError,
    ScenarioValidationError,
    fuzzify,
    generate_scenario,
    initial_multiplex,
    load_scenario,
    save_scenario,
)

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_NUMERIC = 3


def _fail(msg: str) -> int:
    print(f"fhm: {msg}", file=sys.stderr)
    return EXIT_USAGE


def _digest(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _dump_json(payload) -> str:
    return json.dumps(payload, indent=2, sort_keys=True) + "\n"


def _manifest(command: str, config: dict, inputs: dict) -> dict:
    """Reproducibility record embedded in (or written beside) artifacts.

    Timing is deliberately absent here; it lives in the sidecar written
    by _finish so payload bytes do not depend on the clock.
    """
    return {
        "command": command,
        "config": config,
        "inputs": inputs,
        "seed": config.get("seed"),
        "version": __version__,
    }


def _finish(out: Path, manifest: dict, t0: float, embed: bool) -> None:
    """Write the manifest sidecar (unless embedded) and the timing sidecar."""
    if not embed:
        Path(f"{out}.manifest.json").write_text(_dump_json(manifest))
    Path(f"{out}.timing.json").write_text(
        _dump_json({"duration_seconds": time.perf_counter() - t0})
    )


def _load(path_arg: str):
    """Scenario from disk, or an int exit code on any input problem."""
    p = Path(path_arg)
    if not p.is_file():
        return _fail(f"scenario file not found: {p}")
    try:
        return load_scenario(p)
    except (ScenarioFormatError, ScenarioValidationError) as e:
        return _fail(str(e))


def _multiplex_payload(m: Multiplex) -> dict:
    return {
        "outer_weights": m.outer_weights.tolist(),
        "outer_bias": m.outer_bias.tolist(),
        "inner": [
            {"weights": f.weights.tolist(), "external_input": f.external_input.tolist()}
            for f in m.inner
        ],
        "down_coupling": [c.tolist() for c in m.down_coupling],
        "up_aggregation": [a.value for a in m.up_aggregation],
        "interlayer": [
            {
                "src_node": e.src_node,
                "src_concept": e.src_concept,
                "dst_node": e.dst_node,
                "dst_concept": e.dst_concept,
                "weight": e.weight,
            }
            for e in m.interlayer
        ],
        "squash": {"kind": m.squash.kind.value, "steepness": m.squash.steepness},
    }


# ---------------------------------------------------------------------------
# gen

def cmd_gen(args) -> int:
    t0 = time.perf_counter()
    try:
        s = generate_scenario(args.seed, args.outer_n, args.inner_n, args.metrics)
    except ValueError as e:
        return _fail(str(e))
    out = Path(args.out)
    save_scenario(s, out)
    config = {
        "seed": args.seed,
        "outer_n": args.outer_n,
        "inner_n": args.inner_n,
        "metrics": args.metrics,
        "out": str(out),
    }
    _finish(out, _manifest("gen", config, {}), t0, embed=False)
    return EXIT_OK


# ---------------------------------------------------------------------------
# fit

def cmd_fit(args) -> int:
    t0 = time.perf_counter()
    scenario = _load(args.scenario)
    if isinstance(scenario, int):
        return scenario
    try:
        cfg = FitConfig(
            settle_steps=args.settle_steps,
            max_iters=args.max_iters,
            step_size=args.step_size,
            beta=args.beta,
            seed=args.seed,
        )
    except ValueError as e:
        return _fail(str(e))
    m0 = initial_multiplex(scenario, args.seed)
    try:
        res = fit(m0, scenario, cfg)
    except FitNumericalError as e:
        print(f"fhm: numerical failure at iteration {e.iteration}: {e}", file=sys.stderr)
        return EXIT_NUMERIC

    breakdown = loss(res.fitted, scenario, cfg)
    reports = node_reports(res.fitted, res.final_state, scenario)
    ranking = rank_nodes([r.contribution for r in reports])
    out = Path(args.out)
    trace_path = out.with_name(out.stem + "_trace.csv")
    config = {
        "scenario": str(args.scenario),
        "beta": args.beta,
        "step_size": args.step_size,
        "max_iters": args.max_iters,
        "settle_steps": args.settle_steps,
        "seed": args.seed,
        "out": str(out),
    }
    manifest = _manifest("fit", config, {"scenario": _digest(Path(args.scenario))})
    payload = {
        "manifest": manifest,
        "status": res.status.value,
        "iterations": res.iterations,
        "losses": {
            "total": breakdown.total,
            "fit_term": breakdown.fit_term,
            "align_term": breakdown.align_term,
        },
        "metric_names": list(scenario.metric_names),
        "targets": scenario.targets.tolist(),
        "nodes": [
            {
                "node": r.node,
                "metric_values": list(r.metric_values),
                "contribution": r.contribution,
                "entropy": r.entropy,
            }
            for r in reports
        ],
        "ranking": ranking,
        "loss_trace_file": trace_path.name,
        "multiplex": _multiplex_payload(res.fitted),
    }
    out.write_text(_dump_json(payload))
    lines = ["iteration,loss"]
    lines += [f"{i},{v!r}" for i, v in enumerate(res.loss_trace)]
    trace_path.write_text("\n".join(lines) + "\n")
    plots.render_loss_curve(res.loss_trace, out.with_name(out.stem + "_loss.png"))
    plots.render_contributions(
        [r.node for r in reports], [r.contribution for r in reports],
        out.with_name(out.stem + "_contributions.png"),
    )
    _finish(out, manifest, t0, embed=True)
    return EXIT_OK


# ---------------------------------------------------------------------------
# compare

def _parse_seed_range(text: str) -> tuple[int, int]:
    lo, _, hi = text.partition(":")
    a, b = int(lo), int(hi)
    if b < a:
        raise ValueError(f"empty seed range {text!r}")
    return a, b


def cmd_compare(args) -> int:
    t0 = time.perf_counter()
    if (args.scenario is None) == (args.seeds is None):
        return _fail("exactly one of --scenario and --seeds is required")
    inputs = {}
    jobs = []
    if args.scenario is not None:
        scenario = _load(args.scenario)
        if isinstance(scenario, int):
            return scenario
        inputs["scenario"] = _digest(Path(args.scenario))
        jobs.append((Path(args.scenario).name, scenario))
    else:
        try:
            a, b = _parse_seed_range(args.seeds)
            for seed in range(a, b + 1):
                scn = generate_scenario(seed, args.outer_n, args.inner_n,
                                        metric_count=min(4, args.inner_n))
                jobs.append((f"seed-{seed}", scn))
        except ValueError as e:
            return _fail(str(e))

    cfg = FitConfig(max_iters=args.budget)
    rows = []
    wins = 0
    for label, scn in jobs:
        res = compare_fhm_fcm(scn, cfg)
        if res.winner != "fcm":
            wins += 1
        rows.append((label, res.fhm_final_loss, res.fcm_final_loss, res.winner))

    out = Path(args.out)
    lines = ["scenario,fhm_loss,fcm_loss,winner"]
    lines += [f"{label},{fh!r},{fc!r},{w}" for label, fh, fc, w in rows]
    lines.append(f"summary,,,fhm_win_rate={wins}/{len(rows)}={wins / len(rows):.6f}")
    out.write_text("\n".join(lines) + "\n")
    plots.render_comparison(
        [r[0] for r in rows], [r[1] for r in rows], [r[2] for r in rows],
        out.with_name(out.stem + ".png"),
    )
    config = {
        "scenario": args.scenario,
        "seeds": args.seeds,
        "outer_n": args.outer_n,
        "inner_n": args.inner_n,
        "budget": args.budget,
        "out": str(out),
    }
    _finish(out, _manifest("compare", config, inputs), t0, embed=False)
    return EXIT_OK


# ---------------------------------------------------------------------------
# report

def _render_table(header: list[str], rows: list[list[str]], fmt: str) -> str:
    if fmt == "csv":
        return "\n".join([",".join(header)] + [",".join(r) for r in rows]) + "\n"
    widths = [max(len(h), *(len(r[i]) for r in rows)) if rows else len(h)
              for i, h in enumerate(header)]
    def line(cells):
        return "| " + " | ".join(c.ljust(w) for c, w in zip(cells, widths)) + " |"
    sep = "|" + "|".join("-" * (w + 2) for w in widths) + "|"
    return "\n".join([line(header), sep] + [line(r) for r in rows]) + "\n"


def cmd_report(args) -> int:
    t0 = time.perf_counter()
    p = Path(args.fit_report)
    if not p.is_file():
        return _fail(f"fit report not found: {p}")
    raw = p.read_text()
    if not raw.strip():
        return _fail(f"fit report is empty: {p}")
    try:
        data = json.loads(raw)
    except json.JSONDecodeError as e:
        return _fail(f"fit report is not valid JSON: {e}")
    nodes = data.get("nodes")
    names = data.get("metric_names")
    if not isinstance(nodes, list) or not nodes or not isinstance(names, list):
        return _fail("fit report lacks nodes/metric_names")

    ordered = sorted(nodes, key=lambda r: (-r["contribution"], r["node"]))
    header = ["Node"] + [str(n).capitalize() for n in names] + ["Contribution"]
    rows = [
        [str(r["node"])]
        + [f"{v:.2f}" for v in r["metric_values"]]
        + [f"{r['contribution']:.2f}"]
        for r in ordered
    ]
    text = _render_table(header, rows, args.format)
    if args.out is None:
        sys.stdout.write(text)
        return EXIT_OK
    out = Path(args.out)
    out.write_text(text)
    plots.render_contributions(
        [r["node"] for r in ordered], [r["contribution"] for r in ordered],
        out.with_name(out.stem + "_contributions.png"),
    )
    config = {"fit_report": str(p), "format": args.format, "out": str(out)}
    _finish(out, _manifest("report", config, {"fit_report": _digest(p)}), t0, embed=False)
    return EXIT_OK


# ---------------------------------------------------------------------------
# intervals

def cmd_intervals(args) -> int:
    t0 = time.perf_counter()
    scenario = _load(args.scenario)
    if isinstance(scenario, int):
        return scenario
    try:
        fz = fuzzify(scenario, args.width)
    except ValueError as e:
        return _fail(str(e))
    cfg = FitConfig(seed=args.seed)
    m0 = initial_multiplex(scenario, args.seed)
    try:
        res = fit(m0, scenario, cfg)
    except FitNumericalError as e:
        print(f"fhm: numerical failure at iteration {e.iteration}: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    base = initial_state(res.fitted, scenario.initial_outer, scenario.initial_inners)
    try:
        hulls = propagate_intervals(
            res.fitted, fz.inputs, cfg, budget=args.budget,
            base_state=base, readout_map=scenario.readout_map,
        )
    except ValueError as e:
        return _fail(str(e))

    out = Path(args.out)
    config = {
        "scenario": str(args.scenario),
        "width": args.width,
        "budget": args.budget,
        "seed": args.seed,
        "out": str(out),
    }
    manifest = _manifest("intervals", config, {"scenario": _digest(Path(args.scenario))})
    payload = {
        "manifest": manifest,
        "metric_names": list(scenario.metric_names),
        "nodes": [
            {
                "node": i,
                "intervals": {
                    name: [iv.lo, iv.hi]
                    for name, iv in zip(scenario.metric_names, row)
                },
            }
            for i, row in enumerate(hulls)
        ],
    }
    out.write_text(_dump_json(payload))
    plots.render_intervals(
        [[(iv.lo, iv.hi) for iv in row] for row in hulls],
        scenario.metric_names, out.with_name(out.stem + ".png"),
    )
    _finish(out, manifest, t0, embed=True)
    return EXIT_OK


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fhm",
        description="Fuzzy hierarchical multiplex: generate, fit, compare, report.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="generate a synthetic service scenario")
    g.add_argument("--seed", type=int, required=True)
    g.add_argument("--outer-n", type=int, default=5)
    g.add_argument("--inner-n", type=int, default=4)
    g.add_argument("--metrics", type=int, default=4, help="metric count (reads concepts 0..k-1)")
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen)

    f = sub.add_parser("fit", help="fit a multiplex to a scenario's targets")
    f.add_argument("--scenario", required=True)
    f.add_argument("--beta", type=float, default=0.1)
    f.add_argument("--step-size", type=float, default=0.25)
    f.add_argument("--max-iters", type=int, default=500)
    f.add_argument("--settle-steps", type=int, default=8)
    f.add_argument("--seed", type=int, default=0)
    f.add_argument("--out", required=True, help="fit report JSON path")
    f.set_defaults(func=cmd_fit)

    c = sub.add_parser("compare", help="hierarchy vs flat map at equal budgets")
    c.add_argument("--scenario", help="single scenario file")
    c.add_argument("--seeds", help="inclusive seed range A:B for a generated suite")
    c.add_argument("--outer-n", type=int, default=5)
    c.add_argument("--inner-n", type=int, default=4)
    c.add_argument("--budget", type=int, default=60, help="iteration budget for both fits")
    c.add_argument("--out", required=True, help="comparison CSV path")
    c.set_defaults(func=cmd_compare)

    r = sub.add_parser("report", help="render the node table from a fit report")
    r.add_argument("--fit-report", required=True)
    r.add_argument("--format", choices=("csv", "markdown"), default="markdown")
    r.add_argument("--out", help="write here instead of stdout")
    r.set_defaults(func=cmd_report)

    iv = sub.add_parser("intervals", help="propagate fuzzified inputs through a fitted model")
    iv.add_argument("--scenario", required=True)
    iv.add_argument("--width", type=float, default=0.1)
    iv.add_argument("--budget", type=int, default=64)
    iv.add_argument("--seed", type=int, default=0)
    iv.add_argument("--out", required=True, help="interval report JSON path")
    iv.set_defaults(func=cmd_intervals)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    raise SystemExit(main())
