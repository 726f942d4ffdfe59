"""SVG bar charts of horizon-mean errors, one figure per level."""

from __future__ import annotations

import re
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .evaluation import ErrorReport  # noqa: E402

# Fixed ids and no date make repeated renders byte-identical.
matplotlib.rcParams["svg.hashsalt"] = "groupfts"


def slug(text: str) -> str:
    return re.sub(r"[^a-z0-9]+", "_", text.lower()).strip("_")


def plot_level(report: ErrorReport, level: str, path: str | Path) -> None:
    """Grouped bars of Mean(MAFE) and Mean(RMSFE) (x100): methods on the axis, one bar per model."""
    pairs = report.methods()
    models = list(dict.fromkeys(mo for mo, _ in pairs))
    methods = list(dict.fromkeys(me for _, me in pairs))
    fig, axes = plt.subplots(1, 2, figsize=(9, 3.6))
    width = 0.8 / max(len(models), 1)
    x = np.arange(len(methods))
    for ax, (measure, idx) in zip(axes, (("MAFE", 0), ("RMSFE", 1))):
        for j, model in enumerate(models):
            vals = [100 * report.level_errors[(model, me, level, 0)][idx] if (model, me) in pairs else np.nan
                    for me in methods]
            ax.bar(x + (j - (len(models) - 1) / 2) * width, vals, width, label=model)
        ax.set_xticks(x)
        ax.set_xticklabels(methods)
        ax.set_title(f"Mean({measure}) x 100")
    axes[0].legend(frameon=False)
    fig.suptitle(level)
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def plot_report(report: ErrorReport, directory: str | Path) -> list[Path]:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    out = []
    for level in report.levels():
        path = d / f"level_{slug(level)}.svg"
        plot_level(report, level, path)
        out.append(path)
    return out
