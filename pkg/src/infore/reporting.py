"""Report rendering: plain-text tables, CSV/JSON export, and figures.

Figures are rendered headlessly to PNG files next to the delimited output so
a run directory is self-contained.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path
from typing import Mapping

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

from .evaluation import ErrorDistribution, RunReport
from .pruning import TrainingHistory

STRATEGY_ORDER = ["standard", "cot", "infore", "infore_cot"]
STRATEGY_LABELS = {
    "standard": "Standard",
    "cot": "CoT",
    "infore": "InfoRE",
    "infore_cot": "InfoRE + CoT",
}


def _ordered_strategies(report: RunReport) -> list[str]:
    known = [s for s in STRATEGY_ORDER if s in report.by_strategy]
    extra = [s for s in sorted(report.by_strategy) if s not in STRATEGY_ORDER]
    return known + extra


def report_table(report: RunReport, dataset_labels: Mapping[str, str] | None = None) -> str:
    """Plain-text table: one row per strategy, one mean-F1 column per dataset
    and per hop level, in percent."""
    labels = dict(dataset_labels or {})
    strategies = _ordered_strategies(report)
    hop_levels = sorted({h for hops in report.by_hops.values() for h in hops})

    cells: dict[tuple[str, str], list[float]] = {}
    for score in report.per_sample:
        dataset = labels.get(score.sample_id, "all")
        cells.setdefault((score.strategy, dataset), []).append(score.f1)
    datasets = sorted(report.by_dataset)

    columns = ["Method"] + datasets + [f"{h}-hop" for h in hop_levels]
    rows = []
    for strategy in strategies:
        row = [STRATEGY_LABELS.get(strategy, strategy)]
        for dataset in datasets:
            values = cells.get((strategy, dataset))
            row.append("-" if not values else f"{100 * sum(values) / len(values):.2f}")
        for h in hop_levels:
            value = report.by_hops.get(strategy, {}).get(h)
            row.append("-" if value is None else f"{100 * value:.2f}")
        rows.append(row)

    widths = [
        max(len(columns[i]), *(len(r[i]) for r in rows)) if rows else len(columns[i])
        for i in range(len(columns))
    ]
    lines = [
        "  ".join(columns[i].ljust(widths[i]) for i in range(len(columns))),
        "  ".join("-" * widths[i] for i in range(len(columns))),
    ]
    for row in rows:
        lines.append("  ".join(row[i].ljust(widths[i]) for i in range(len(row))))
    lines.append("")
    lines.append(
        f"format failures: {report.format_failures}   "
        f"skipped samples: {report.skipped_samples}   "
        f"backend calls: {report.backend_calls}"
    )
    return "\n".join(lines)


def write_per_sample_csv(report: RunReport, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["sample_id", "strategy", "f1", "failed"])
        for score in report.per_sample:
            writer.writerow([score.sample_id, score.strategy, repr(score.f1), int(score.failed)])


def strategy_figure(report: RunReport, path) -> Path:
    """Bar chart of mean F1 per strategy."""
    strategies = _ordered_strategies(report)
    values = [100 * report.by_strategy[s] for s in strategies]
    labels = [STRATEGY_LABELS.get(s, s) for s in strategies]
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.bar(labels, values, color="#4878a8")
    ax.set_ylabel("mean F1 (%)")
    ax.set_ylim(0, 100)
    ax.set_title("Mean F1 by strategy")
    for i, v in enumerate(values):
        ax.text(i, v + 1, f"{v:.1f}", ha="center", fontsize=9)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return Path(path)


def hops_figure(report: RunReport, path) -> Path | None:
    """Grouped bars of mean F1 per hop level, one group per strategy; None
    when no sample carries a hop count."""
    hop_levels = sorted({h for hops in report.by_hops.values() for h in hops})
    if not hop_levels:
        return None
    strategies = [s for s in _ordered_strategies(report) if s in report.by_hops]
    width = 0.8 / len(hop_levels)
    fig, ax = plt.subplots(figsize=(7, 4))
    for j, h in enumerate(hop_levels):
        xs = [i + j * width for i in range(len(strategies))]
        ys = [100 * report.by_hops[s].get(h, 0.0) for s in strategies]
        ax.bar(xs, ys, width=width, label=f"{h}-hop")
    ax.set_xticks([i + 0.4 - width / 2 for i in range(len(strategies))])
    ax.set_xticklabels([STRATEGY_LABELS.get(s, s) for s in strategies])
    ax.set_ylabel("mean F1 (%)")
    ax.set_ylim(0, 100)
    ax.set_title("Mean F1 by hop level")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return Path(path)


def training_figure(history: TrainingHistory, path) -> Path:
    """Per-episode mean reward with a 50-episode rolling mean overlay."""
    episodes = [r.episode for r in history.records]
    rewards = [r.mean_reward for r in history.records]
    fig, ax = plt.subplots(figsize=(7, 4))
    ax.plot(episodes, rewards, alpha=0.3, label="episode mean")
    if len(rewards) >= 2:
        window = min(50, len(rewards))
        rolling = []
        for i in range(len(rewards)):
            chunk = rewards[max(0, i - window + 1) : i + 1]
            rolling.append(sum(chunk) / len(chunk))
        ax.plot(episodes, rolling, label=f"rolling mean ({window})")
    ax.set_xlabel("episode")
    ax.set_ylabel("mean reward")
    ax.set_title("Pruning policy training")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return Path(path)


def error_figure(distribution: ErrorDistribution, path) -> Path:
    """Error-category proportions plus the corrected fraction."""
    labels = list(distribution.proportions) + ["Corrected"]
    values = [100 * v for v in distribution.proportions.values()] + [
        100 * distribution.corrected_fraction
    ]
    colors = ["#4878a8"] * (len(labels) - 1) + ["#6aa84f"]
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.bar(labels, values, color=colors)
    ax.set_ylabel("percent")
    ax.set_title("Error categories and corrected fraction")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return Path(path)


def quality_figure(scores: Mapping[str, float], path) -> Path:
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.bar(list(scores), list(scores.values()), color="#4878a8")
    ax.set_ylabel("weighted average rank score")
    ax.set_ylim(1, 3)
    ax.set_title("Re-organized information quality")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return Path(path)


def write_report_files(
    report: RunReport,
    outdir: str | Path,
    dataset_labels: Mapping[str, str] | None = None,
    error_dist: ErrorDistribution | None = None,
) -> list[Path]:
    """Write report.json, report.txt, per_sample.csv, and figures."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    figures = outdir / "figures"
    figures.mkdir(exist_ok=True)

    written = []
    json_path = outdir / "report.json"
    json_path.write_text(json.dumps(report.to_dict(), indent=2), encoding="utf-8")
    written.append(json_path)

    txt_path = outdir / "report.txt"
    txt_path.write_text(report_table(report, dataset_labels) + "\n", encoding="utf-8")
    written.append(txt_path)

    csv_path = outdir / "per_sample.csv"
    write_per_sample_csv(report, csv_path)
    written.append(csv_path)

    written.append(strategy_figure(report, figures / "strategy_f1.png"))
    hops_path = hops_figure(report, figures / "hops_f1.png")
    if hops_path:
        written.append(hops_path)
    if error_dist is not None:
        written.append(error_figure(error_dist, figures / "error_distribution.png"))
    return written
