"""Figure rendering for decision-support reports.

Each report exporter has a matching renderer that writes a PNG next to the
delimited output. Rendering is headless (Agg) and deterministic in layout.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

from .analytics import LabelCountReport, TimeSeriesPoint

_LABEL_COLORS = {"Positive": "#2a9d8f", "Negative": "#e76f51"}
_FIGSIZE = (6.4, 3.6)


def render_label_counts(report: LabelCountReport, path: str | Path) -> Path:
    """Bar chart of documents per sentiment category."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig, ax = plt.subplots(figsize=_FIGSIZE)
    cats = [row.category for row in report.rows]
    nums = [row.number for row in report.rows]
    colors = [_LABEL_COLORS.get(c, "#577590") for c in cats]
    bars = ax.bar(cats, nums, color=colors)
    for bar, row in zip(bars, report.rows):
        ax.annotate(
            f"{row.number:,} ({row.percentage:.1f}%)",
            xy=(bar.get_x() + bar.get_width() / 2, bar.get_height()),
            xytext=(0, 3),
            textcoords="offset points",
            ha="center",
            fontsize=9,
        )
    ax.set_ylabel("documents")
    ax.set_title(f"Sentiment label counts (total {report.total:,})")
    ax.spines["top"].set_visible(False)
    ax.spines["right"].set_visible(False)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def render_timeline(points: list[TimeSeriesPoint], path: str | Path) -> Path:
    """Stacked per-window counts with the mean positive probability overlaid."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig, ax = plt.subplots(figsize=_FIGSIZE)
    if points:
        xs = [p.window_start for p in points]
        width = points[0].window_len * 0.9
        pos = [p.positive_count for p in points]
        neg = [p.negative_count for p in points]
        ax.bar(xs, pos, width=width, align="edge", label="positive",
               color=_LABEL_COLORS["Positive"])
        ax.bar(xs, neg, width=width, align="edge", bottom=pos, label="negative",
               color=_LABEL_COLORS["Negative"])
        ax2 = ax.twinx()
        centers = [p.window_start + p.window_len / 2 for p in points]
        ax2.plot(centers, [p.mean_probability for p in points],
                 color="#264653", marker="o", linewidth=1.2, label="mean p(positive)")
        ax2.set_ylim(0.0, 1.0)
        ax2.set_ylabel("mean p(positive)")
        ax.legend(loc="upper left", fontsize=8)
    else:
        ax.text(0.5, 0.5, "no records in range", ha="center", va="center",
                transform=ax.transAxes)
    ax.set_xlabel("window start (epoch ms)")
    ax.set_ylabel("records")
    ax.set_title("Sentiment over time (tumbling windows)")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path
