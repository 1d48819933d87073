"""Report rendering: text tables, delimited files, and matplotlib figures.

Metric values live in [0, 1] everywhere in the engine; tables and figures
print them scaled by 100 with two decimals, matching the usual reporting
convention for retrieval benchmarks.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

from .evaluate import EvalReport

SCALE = 100.0


def format_eval_table(report: EvalReport, row_name: str = "checkpoint") -> str:
    ks = sorted(report.map_at_k)
    header = ["model"] + [f"mAP@{k}" for k in ks] + [f"R@{k}" for k in ks]
    row = (
        [row_name]
        + [f"{report.map_at_k[k] * SCALE:.2f}" for k in ks]
        + [f"{report.recall_at_k[k] * SCALE:.2f}" for k in ks]
    )
    widths = [max(len(h), len(r)) for h, r in zip(header, row)]
    lines = [
        "  ".join(h.ljust(w) for h, w in zip(header, widths)),
        "  ".join(r.ljust(w) for r, w in zip(row, widths)),
    ]
    return "\n".join(lines)


def format_ablation_table(grid: list[dict]) -> str:
    """Rows are weighting values, columns mAP@K, shaped like the usual
    hard-negative ablation table."""
    if not grid:
        return "(empty grid)"
    ks = sorted(int(k) for k in grid[0]["map_at_k"])
    header = ["HN-Weighting"] + [f"mAP@{k}" for k in ks]
    rows = []
    for cell in grid:
        rows.append(
            [f"{cell['beta']:.1f}"]
            + [f"{cell['map_at_k'][str(k)] * SCALE:.2f}" for k in ks]
        )
    widths = [max(len(header[i]), *(len(r[i]) for r in rows)) for i in range(len(header))]
    lines = ["  ".join(h.ljust(w) for h, w in zip(header, widths))]
    for r in rows:
        lines.append("  ".join(c.ljust(w) for c, w in zip(r, widths)))
    return "\n".join(lines)


def write_eval_csv(report: EvalReport, path: str | Path) -> None:
    ks = sorted(report.map_at_k)
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["k", "map", "recall"])
        for k in ks:
            writer.writerow([k, f"{report.map_at_k[k]:.6f}", f"{report.recall_at_k[k]:.6f}"])


def write_ablation_csv(grid: list[dict], path: str | Path) -> None:
    if not grid:
        return
    ks = sorted(int(k) for k in grid[0]["map_at_k"])
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["beta"] + [f"map@{k}" for k in ks])
        for cell in grid:
            writer.writerow(
                [cell["beta"]] + [f"{cell['map_at_k'][str(k)]:.6f}" for k in ks]
            )


def plot_loss_curve(history: list[dict], path: str | Path) -> None:
    epochs = [row["epoch"] for row in history if "loss" in row]
    losses = [row["loss"] for row in history if "loss" in row]
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(epochs, losses, lw=1.5)
    ax.set_xlabel("epoch")
    ax.set_ylabel("mean batch loss")
    ax.set_title("training loss")
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120, metadata={"Software": "covrbench"})
    plt.close(fig)


def plot_map_bars(report: EvalReport, path: str | Path) -> None:
    ks = sorted(report.map_at_k)
    values = [report.map_at_k[k] * SCALE for k in ks]
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.bar([f"mAP@{k}" for k in ks], values, color="#4878d0")
    ax.set_ylabel("mAP (x100)")
    ax.set_ylim(0, max(100.0, max(values) * 1.1))
    ax.set_title(f"retrieval quality ({report.query_count} queries)")
    for i, v in enumerate(values):
        ax.text(i, v, f"{v:.1f}", ha="center", va="bottom", fontsize=9)
    fig.tight_layout()
    fig.savefig(path, dpi=120, metadata={"Software": "covrbench"})
    plt.close(fig)


def plot_ablation_grid(grid: list[dict], path: str | Path) -> None:
    if not grid:
        return
    ks = sorted(int(k) for k in grid[0]["map_at_k"])
    fig, ax = plt.subplots(figsize=(6, 4))
    for cell in grid:
        values = [cell["map_at_k"][str(k)] * SCALE for k in ks]
        ax.plot(ks, values, marker="o", label=f"weighting {cell['beta']:.1f}")
    ax.set_xlabel("K")
    ax.set_ylabel("mAP (x100)")
    ax.set_xticks(ks)
    ax.set_title("hard-negative weighting ablation")
    ax.legend()
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120, metadata={"Software": "covrbench"})
    plt.close(fig)


def load_history_csv(path: str | Path) -> list[dict]:
    rows = []
    with open(path, newline="") as f:
        for row in csv.DictReader(f):
            parsed: dict = {}
            for k, v in row.items():
                if v is None or v == "":
                    continue
                try:
                    parsed[k] = int(v) if k == "epoch" else float(v)
                except ValueError:
                    parsed[k] = v
            rows.append(parsed)
    return rows


def render_run_reports(run_dir: str | Path, out_dir: str | Path) -> list[Path]:
    """Render every known artifact in a run directory to figures + CSV.

    Looks for metrics.csv, eval_report.json, and ablation.json; silently
    skips whatever is absent. Returns the paths written.
    """
    run_dir = Path(run_dir)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []

    metrics = run_dir / "metrics.csv"
    if metrics.exists():
        history = load_history_csv(metrics)
        if history:
            p = out_dir / "loss_curve.png"
            plot_loss_curve(history, p)
            written.append(p)

    eval_json = run_dir / "eval_report.json"
    if eval_json.exists():
        obj = json.loads(eval_json.read_text())
        report = EvalReport(
            map_at_k={int(k): v for k, v in obj["map_at_k"].items()},
            recall_at_k={int(k): v for k, v in obj["recall_at_k"].items()},
            per_query=obj.get("per_query", []),
            gallery_size=obj.get("gallery_size", 0),
            query_count=obj.get("query_count", 0),
        )
        p = out_dir / "map_bars.png"
        plot_map_bars(report, p)
        written.append(p)
        p = out_dir / "eval_metrics.csv"
        write_eval_csv(report, p)
        written.append(p)

    ablation = run_dir / "ablation.json"
    if ablation.exists():
        grid = json.loads(ablation.read_text())["grid"]
        p = out_dir / "ablation_grid.png"
        plot_ablation_grid(grid, p)
        written.append(p)
        p = out_dir / "ablation.csv"
        write_ablation_csv(grid, p)
        written.append(p)

    return written
