"""Matplotlib rendering for experiment figure data.

Figures are rendered headlessly (Agg) to PNG files next to the delimited
report output. Numeric comparisons in tests always use the CSV, never the
images.
"""

from __future__ import annotations

import os

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)

from .experiments import FigureData

__all__ = ["render_figure", "render_all"]


def render_figure(figure: FigureData, output_dir: str) -> str:
    fig, ax = plt.subplots(figsize=(6.4, 4.2))
    for label, x, y in figure.series:
        ax.plot(x, y, label=label, linewidth=1.6)
    ax.set_xscale(figure.xscale)
    ax.set_title(figure.title)
    ax.set_xlabel(figure.xlabel)
    ax.set_ylabel(figure.ylabel)
    ax.grid(True, alpha=0.3)
    ax.legend()
    fig.tight_layout()
    path = os.path.join(output_dir, figure.filename)
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def render_all(figures, output_dir: str) -> list[str]:
    return [render_figure(f, output_dir) for f in figures]
