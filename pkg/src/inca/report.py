"""Human-readable report rendering: markdown summary, score table, figures."""

from __future__ import annotations

import csv
from pathlib import Path
from typing import Mapping, Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

from .dataio import METRIC_COLUMNS
from .model import RcaReport


def write_scores_csv(reports: Sequence[RcaReport], path: Path) -> None:
    path = Path(path)
    with path.open("w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["fault_id", "entity", "rank", "final", "topological", "individual"])
        for report in reports:
            position = {e: i + 1 for i, e in enumerate(report.ranked)}
            for entity in sorted(report.per_entity):
                scores = report.per_entity[entity]
                writer.writerow(
                    [
                        report.fault_id,
                        entity,
                        position.get(entity, ""),
                        f"{scores.final:.6f}",
                        f"{scores.topological:.6f}",
                        f"{scores.individual:.6f}",
                    ]
                )


def _score_figure(report: RcaReport, path: Path) -> None:
    entities = list(report.ranked)
    final = [report.per_entity[e].final for e in entities]
    topol = [report.per_entity[e].topological for e in entities]
    indiv = [report.per_entity[e].individual for e in entities]
    y = range(len(entities))
    height = 0.27
    fig, ax = plt.subplots(figsize=(7, 0.5 * max(len(entities), 4) + 1.2))
    ax.barh([v + height for v in y], final, height, label="final", color="#d62728")
    ax.barh(list(y), topol, height, label="topological", color="#1f77b4")
    ax.barh([v - height for v in y], indiv, height, label="individual", color="#ff7f0e")
    ax.set_yticks(list(y))
    ax.set_yticklabels(entities)
    ax.invert_yaxis()
    ax.set_xlabel("score")
    ax.set_title(f"top-{len(entities)} candidates, fault {report.fault_id}")
    ax.legend(loc="lower right")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def _loss_figure(graphs: Mapping, path: Path) -> None:
    fig, ax = plt.subplots(figsize=(7, 4))
    for fault in sorted(graphs):
        for metric in sorted(graphs[fault]):
            trace = graphs[fault][metric].get("loss_trace")
            if trace:
                ax.plot(trace, label=f"{fault}/{metric}")
    ax.set_xlabel("accepted step")
    ax.set_ylabel("objective")
    ax.set_yscale("log")
    ax.set_title("training objective per metric")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def _markdown_table(header: Sequence[str], rows: Sequence[Sequence[str]]) -> str:
    lines = ["| " + " | ".join(header) + " |", "| " + " | ".join("---" for _ in header) + " |"]
    lines += ["| " + " | ".join(row) + " |" for row in rows]
    return "\n".join(lines)


def render_report(
    reports: Sequence[RcaReport],
    out_dir: Path,
    graphs: Mapping | None = None,
    metric_values: Mapping[str, float] | None = None,
) -> list[Path]:
    """Write report.md, scores.csv, and PNG figures into out_dir."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []

    scores_path = out_dir / "scores.csv"
    write_scores_csv(reports, scores_path)
    written.append(scores_path)

    lines = ["# Root-cause localization report", ""]
    if metric_values is not None:
        lines += [
            "## Evaluation metrics",
            "",
            _markdown_table(METRIC_COLUMNS, [[f"{100 * metric_values[c]:.2f}%" for c in METRIC_COLUMNS]]),
            "",
        ]
    for report in reports:
        fig_path = out_dir / f"scores_{report.fault_id}.png"
        _score_figure(report, fig_path)
        written.append(fig_path)
        rows = [
            [
                str(i + 1),
                entity,
                f"{report.per_entity[entity].final:.4f}",
                f"{report.per_entity[entity].topological:.4f}",
                f"{report.per_entity[entity].individual:.4f}",
            ]
            for i, entity in enumerate(report.ranked)
        ]
        lines += [
            f"## Fault `{report.fault_id}`",
            "",
            _markdown_table(["rank", "entity", "final", "topological", "individual"], rows),
            "",
            f"![scores]({fig_path.name})",
            "",
        ]
    if graphs:
        loss_path = out_dir / "training_loss.png"
        _loss_figure(graphs, loss_path)
        written.append(loss_path)
        lines += ["## Training", "", "![loss](training_loss.png)", ""]

    md_path = out_dir / "report.md"
    md_path.write_text("\n".join(lines))
    written.append(md_path)
    return written
