"""Figure rendering for the CLI report path.

All figures go through the Agg backend and carry no timestamps, so a
rerun with the same data writes byte-identical PNG files.
"""
from __future__ import annotations

from typing import Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402

__all__ = [
    "render_loss_curve",
    "render_contributions",
    "render_comparison",
    "render_intervals",
]

_DPI = 100


def _save(fig, path) -> None:
    fig.savefig(path, dpi=_DPI)
    plt.close(fig)


def render_loss_curve(trace: Sequence[float], path) -> None:
    """Loss per iteration, log scale while the trace stays positive."""
    fig, ax = plt.subplots(figsize=(6.4, 4.0))
    ax.plot(range(len(trace)), trace, color="#1f77b4", lw=1.5)
    if all(v > 0.0 for v in trace):
        ax.set_yscale("log")
    ax.set_xlabel("iteration")
    ax.set_ylabel("loss")
    ax.set_title("fit loss trace")
    ax.grid(True, alpha=0.3)
    _save(fig, path)


def render_contributions(nodes: Sequence[int], contributions: Sequence[float], path) -> None:
    fig, ax = plt.subplots(figsize=(6.4, 4.0))
    ax.bar([str(n) for n in nodes], contributions, color="#2ca02c")
    ax.set_xlabel("node")
    ax.set_ylabel("contribution")
    ax.set_ylim(0, 10)
    ax.set_title("node contributions")
    _save(fig, path)


def render_comparison(labels: Sequence[str], fhm: Sequence[float], fcm: Sequence[float], path) -> None:
    """Final losses of both models, one bar pair per scenario."""
    idx = range(len(labels))
    fig, ax = plt.subplots(figsize=(max(6.4, 0.5 * len(labels) + 2), 4.0))
    w = 0.4
    ax.bar([i - w / 2 for i in idx], fhm, width=w, label="fhm", color="#1f77b4")
    ax.bar([i + w / 2 for i in idx], fcm, width=w, label="fcm", color="#ff7f0e")
    ax.set_xticks(list(idx))
    ax.set_xticklabels(labels, rotation=45, ha="right", fontsize=8)
    if all(v > 0.0 for v in list(fhm) + list(fcm)):
        ax.set_yscale("log")
    ax.set_ylabel("final loss")
    ax.set_title("hierarchy vs flat map")
    ax.legend()
    fig.tight_layout()
    _save(fig, path)


def render_intervals(
    hulls: Sequence[Sequence[tuple[float, float]]],
    metric_names: Sequence[str],
    path,
) -> None:
    """One vertical span per (node, metric) hull."""
    k = len(metric_names)
    fig, ax = plt.subplots(figsize=(max(6.4, 0.4 * len(hulls) * k + 2), 4.0))
    pos = 0
    ticks, tick_labels = [], []
    colors = plt.rcParams["axes.prop_cycle"].by_key()["color"]
    for i, row in enumerate(hulls):
        for j, (lo, hi) in enumerate(row):
            c = colors[j % len(colors)]
            ax.vlines(pos, lo, hi, color=c, lw=4, alpha=0.8)
            ax.plot([pos], [(lo + hi) / 2], "o", color=c, ms=3)
            ticks.append(pos)
            tick_labels.append(f"{i}:{metric_names[j]}")
            pos += 1
        pos += 1
    ax.set_xticks(ticks)
    ax.set_xticklabels(tick_labels, rotation=90, fontsize=7)
    ax.set_ylim(-0.05, 1.05)
    ax.set_ylabel("metric value")
    ax.set_title("interval readouts")
    fig.tight_layout()
    _save(fig, path)
