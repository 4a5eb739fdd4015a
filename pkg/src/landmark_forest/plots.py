"""Optional figures for CLI outputs.

Figures are drawn on a bare Agg canvas so nothing touches pyplot state and
no display is needed.
"""
from __future__ import annotations

import numpy as np
from matplotlib.backends.backend_agg import FigureCanvasAgg
from matplotlib.figure import Figure

MAX_CURVES = 20


def _save(fig: Figure, path) -> None:
    FigureCanvasAgg(fig)
    fig.tight_layout()
    fig.savefig(path, dpi=120, metadata={"Software": None})


def survival_curves(curves, ids, path, max_curves: int = MAX_CURVES) -> None:
    """Step plot of the first ``max_curves`` predicted curves."""
    fig = Figure(figsize=(6, 4))
    ax = fig.add_subplot()
    for i in range(min(len(ids), max_curves)):
        c = curves.curve(i)
        ax.step(np.r_[0.0, c.jump_times], np.r_[1.0, c.values], where="post", lw=1, label=str(ids[i]))
    ax.set_xlabel("time since landmark")
    ax.set_ylabel("survival")
    ax.set_ylim(0, 1.02)
    if 0 < len(ids) <= 10:
        ax.legend(fontsize=7)
    _save(fig, path)


def concordance(report, path) -> None:
    """Concordance against horizon, with the integrated value as a reference line."""
    fig = Figure(figsize=(6, 4))
    ax = fig.add_subplot()
    ax.plot(report.times, report.con, marker=".", lw=1)
    if report.integrated is not None:
        ax.axhline(report.integrated, ls="--", color="gray", lw=1)
    ax.axhline(0.5, ls=":", color="black", lw=0.8)
    ax.set_xlabel("horizon t")
    ax.set_ylabel("concordance")
    _save(fig, path)


def importance(report, path) -> None:
    """Horizontal bars of mean concordance drop, most important on top."""
    entries = [e for e in report.sorted() if e.estimable]
    fig = Figure(figsize=(6, max(2.5, 0.25 * len(entries) + 1)))
    ax = fig.add_subplot()
    if entries:
        pos = np.arange(len(entries))[::-1]
        ax.barh(pos, [e.mean for e in entries], xerr=[e.sd for e in entries], color="tab:blue")
        ax.set_yticks(pos, [e.name for e in entries], fontsize=7)
    ax.axvline(0.0, color="black", lw=0.8)
    ax.set_xlabel("drop in integrated concordance")
    _save(fig, path)


def benchmark_table(result, path) -> None:
    """One panel per metric, methods side by side with +-2 s.e. bars."""
    from .simulate.benchmark import METRICS, SCALE

    fig = Figure(figsize=(10, 3))
    axes = fig.subplots(1, len(METRICS))
    x = np.arange(len(result.methods))
    for ax, metric in zip(axes, METRICS):
        means = [SCALE * result.mean(m, metric) for m in result.methods]
        ses = [SCALE * result.se(m, metric) for m in result.methods]
        ax.bar(x, means, yerr=2 * np.nan_to_num(ses), color="tab:gray")
        ax.set_xticks(x, result.methods)
        ax.set_title(metric.upper())
    _save(fig, path)
