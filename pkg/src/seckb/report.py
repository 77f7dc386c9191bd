"""Offline issue report: delimited output plus charts.

Writes ``issues.csv`` and two PNG figures (severity distribution, top issue
scores) so a pipeline step can archive a human-readable snapshot next to the
machine-readable one.
"""

from __future__ import annotations

import csv
from pathlib import Path
from typing import Any, Mapping, Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)

SEVERITY_ORDER = ["critical", "high", "medium", "low", "info"]
SEVERITY_COLORS = {
    "critical": "#7b1fa2",
    "high": "#c62828",
    "medium": "#ef6c00",
    "low": "#f9a825",
    "info": "#90a4ae",
}

CSV_COLUMNS = [
    "rank", "issue_key", "title", "max_severity", "status", "score",
    "members", "observed_in_reports",
]


def write_issue_csv(views: Sequence[Mapping[str, Any]], path: Path) -> Path:
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_COLUMNS)
        for view in views:
            writer.writerow([
                view["rank"] if view["rank"] is not None else "",
                view["issue_key"],
                view["title"],
                view["max_severity"],
                view["status"],
                f'{view["score"]:.4f}' if view["score"] is not None else "",
                ";".join(view["members"]),
                ";".join(view["observed_in_reports"]),
            ])
    return path


def severity_distribution_figure(views: Sequence[Mapping[str, Any]], path: Path) -> Path:
    counts = {s: 0 for s in SEVERITY_ORDER}
    for view in views:
        severity = view.get("max_severity")
        if severity in counts:
            counts[severity] += 1
    fig, ax = plt.subplots(figsize=(6, 3.5))
    labels = [s.capitalize() for s in SEVERITY_ORDER]
    values = [counts[s] for s in SEVERITY_ORDER]
    ax.bar(labels, values, color=[SEVERITY_COLORS[s] for s in SEVERITY_ORDER])
    ax.set_ylabel("issues")
    ax.set_title("Open issues by max severity")
    for i, value in enumerate(values):
        if value:
            ax.text(i, value, str(value), ha="center", va="bottom", fontsize=9)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def priority_scores_figure(views: Sequence[Mapping[str, Any]], path: Path,
                           top_n: int = 15) -> Path:
    ranked = [v for v in views if v.get("rank") is not None][:top_n]
    fig, ax = plt.subplots(figsize=(7, max(2.5, 0.4 * len(ranked) + 1.2)))
    if ranked:
        labels = [
            f'#{v["rank"]} {v["title"][:48]}' + ("…" if len(v["title"]) > 48 else "")
            for v in ranked
        ]
        scores = [v["score"] for v in ranked]
        colors = [SEVERITY_COLORS.get(v["max_severity"], "#607d8b") for v in ranked]
        positions = range(len(ranked) - 1, -1, -1)
        ax.barh(list(positions), scores, color=colors)
        ax.set_yticks(list(positions))
        ax.set_yticklabels(labels, fontsize=8)
        ax.set_xlabel("priority score")
    else:
        ax.text(0.5, 0.5, "no ranked issues", ha="center", va="center",
                transform=ax.transAxes)
        ax.set_axis_off()
    ax.set_title(f"Top {len(ranked)} issues by priority")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def write_report(views: Sequence[Mapping[str, Any]], out_dir: Path) -> list[Path]:
    out_dir.mkdir(parents=True, exist_ok=True)
    return [
        write_issue_csv(views, out_dir / "issues.csv"),
        severity_distribution_figure(views, out_dir / "severity_distribution.png"),
        priority_scores_figure(views, out_dir / "priority_scores.png"),
    ]
