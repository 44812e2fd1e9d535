"""Plain-text accuracy tables and matplotlib figures for the report path."""

from __future__ import annotations

import math
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from .evaluation import AccuracyTable

STRATEGY_LABELS = {
    "nf": "NF",
    "hc": "HC",
    "bn": "B-n",
    "oracle": "Oracle",
}


def render_text_table(table: AccuracyTable) -> str:
    """Classes as rows, strategies as column pairs (REP-5px / ADD-0.1d %)."""
    strategies = table.strategies()
    classes = sorted({(r.class_id, r.class_name) for r in table.rows})
    by_key = {(r.strategy, r.class_id): r for r in table.rows}

    header = ["object"] + [
        f"{STRATEGY_LABELS.get(s, s)} {metric}"
        for s in strategies
        for metric in ("REP-5px", "ADD-0.1d")
    ]
    lines = [header]
    for class_id, class_name in classes:
        cells = [class_name]
        for s in strategies:
            row = by_key.get((s, class_id))
            if row is None:
                cells += ["-", "-"]
            else:
                cells += [f"{row.rep5_accuracy_pct:.1f}", f"{row.add01d_accuracy_pct:.1f}"]
        lines.append(cells)
    totals = ["all"]
    for s in strategies:
        overall = table.overall(s)
        totals += [f"{overall.rep5_accuracy_pct:.1f}", f"{overall.add01d_accuracy_pct:.1f}"]
    lines.append(totals)

    widths = [max(len(line[i]) for line in lines) for i in range(len(header))]
    rendered = []
    for j, line in enumerate(lines):
        rendered.append("  ".join(cell.rjust(w) for cell, w in zip(line, widths)))
        if j == 0 or j == len(lines) - 2:
            rendered.append("-" * (sum(widths) + 2 * (len(widths) - 1)))
    return "\n".join(rendered) + "\n"


def render_figures(table: AccuracyTable, records, out_dir) -> list[Path]:
    """Write PNG figures next to the delimited output; returns their paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    strategies = table.strategies()
    paths = []

    fig, ax = plt.subplots(figsize=(7, 4))
    x = np.arange(len(strategies))
    rep = [table.overall(s).rep5_accuracy_pct for s in strategies]
    add = [table.overall(s).add01d_accuracy_pct for s in strategies]
    ax.bar(x - 0.2, rep, width=0.4, label="REP-5px")
    ax.bar(x + 0.2, add, width=0.4, label="ADD-0.1d")
    ax.set_xticks(x)
    ax.set_xticklabels([STRATEGY_LABELS.get(s, s) for s in strategies])
    ax.set_ylabel("accuracy [%]")
    ax.set_ylim(0, 105)
    ax.set_title("Pose accuracy by fusion strategy")
    ax.legend()
    ax.grid(axis="y", alpha=0.3)
    fig.tight_layout()
    path = out / "accuracy_by_strategy.png"
    fig.savefig(path, dpi=120)
    plt.close(fig)
    paths.append(path)

    if records:
        fig, ax = plt.subplots(figsize=(7, 4))
        for s in strategies:
            errs = sorted(
                r.rep_px for r in records if r.strategy == s and math.isfinite(r.rep_px)
            )
            if not errs:
                continue
            frac = np.arange(1, len(errs) + 1) / len(errs) * 100.0
            ax.plot(errs, frac, label=STRATEGY_LABELS.get(s, s))
        ax.axvline(5.0, color="gray", linestyle="--", linewidth=1)
        ax.set_xscale("log")
        ax.set_xlabel("mean reprojection error [px]")
        ax.set_ylabel("instances below [%]")
        ax.set_title("Reprojection error distribution")
        ax.legend()
        ax.grid(alpha=0.3)
        fig.tight_layout()
        path = out / "rep_error_cdf.png"
        fig.savefig(path, dpi=120)
        plt.close(fig)
        paths.append(path)
    return paths
