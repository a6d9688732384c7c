"""Report figures rendered to files next to the JSON/text reports."""
from __future__ import annotations

from pathlib import Path
from typing import List, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .evaluation import EXPERIMENT_LABELS, EvalReport  # noqa: E402

STYLE = {
    "font.size": 9,
    "axes.labelsize": 9,
    "axes.titlesize": 10,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "savefig.dpi": 120,
    "savefig.bbox": "tight",
}


def fold_tdr_figure(reports: Sequence[EvalReport]):
    """Per-fold TDR bars for every experiment, mean +- std as an error bar."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(6.0, 3.2))
        k = max(r.k for r in reports)
        width = 0.8 / k
        x = np.arange(len(reports))
        for f in range(k):
            vals = [r.fold_tdr[f] if f < len(r.fold_tdr) else np.nan for r in reports]
            ax.bar(x - 0.4 + width * (f + 0.5), vals, width, label=f"fold {f + 1}", alpha=0.8)
        ax.errorbar(x, [r.tdr_mean for r in reports], yerr=[r.tdr_std for r in reports],
                    fmt="o", color="k", capsize=3, label="mean")
        ax.set_xticks(x, [EXPERIMENT_LABELS[r.experiment] for r in reports])
        ax.set_ylim(0, 1.05)
        ax.set_ylabel(f"TDR @ FDR = {reports[0].fdr_target * 100:g}%")
        ax.legend(loc="upper left", bbox_to_anchor=(1.01, 1.0), frameon=False)
    return fig


def score_histogram_figure(report: EvalReport):
    """Pooled test-score distributions of live and spoof samples."""
    live = np.concatenate([f["live"] for f in report.fold_scores]) if report.fold_scores else []
    spoof = np.concatenate([f["spoof"] for f in report.fold_scores]) if report.fold_scores else []
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(4.5, 3.0))
        bins = np.linspace(0, 1, 41)
        ax.hist(live, bins=bins, alpha=0.6, label="live")
        ax.hist(spoof, bins=bins, alpha=0.6, label="spoof")
        ax.axvline(0.5, color="k", lw=0.8, ls="--")
        ax.set_xlabel("calibrated spoof score")
        ax.set_ylabel("test samples")
        ax.set_title(EXPERIMENT_LABELS[report.experiment])
        ax.legend()
    return fig


def class_rate_figure(report: EvalReport):
    names = list(report.class_rates)
    means = [report.class_rates[n]["mean"] for n in names]
    stds = [report.class_rates[n]["std"] for n in names]
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(4.5, 3.0))
        ax.barh(names, means, xerr=stds, capsize=3, color="0.6")
        ax.set_xlim(0, 1.05)
        ax.invert_yaxis()
        ax.set_xlabel("correct detection rate (threshold 0.5)")
        ax.set_title(EXPERIMENT_LABELS[report.experiment])
    return fig


def render_report_figures(reports: Sequence[EvalReport], out_dir) -> List[Path]:
    """Write PNG figures for ``reports`` into ``out_dir``; returns their paths."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    figures = [("fold_tdr.png", fold_tdr_figure(reports))]
    for r in reports:
        tag = r.experiment.lower()
        figures.append((f"scores_{tag}.png", score_histogram_figure(r)))
        figures.append((f"class_rates_{tag}.png", class_rate_figure(r)))
    paths = []
    for name, fig in figures:
        path = out_dir / name
        with plt.rc_context(STYLE):
            fig.savefig(path)
        plt.close(fig)
        paths.append(path)
    return paths
