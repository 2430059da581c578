"""Matplotlib figure settings and the figures written by the report paths.

Figures are built on ``matplotlib.figure.Figure`` with an Agg canvas, never
through pyplot, so worker threads do not share global figure state.
"""

from __future__ import annotations

import io
from contextlib import contextmanager

import matplotlib as mpl
import numpy as np
from matplotlib.backends.backend_agg import FigureCanvasAgg
from matplotlib.figure import Figure

STYLE = {
    "font.family": "DejaVu Sans",
    "font.size": 7,
    "axes.titlesize": 7,
    "axes.labelsize": 8,
    "axes.linewidth": 0.5,
    "xtick.labelsize": 6,
    "ytick.labelsize": 6,
    "legend.fontsize": 6,
    "lines.linewidth": 1.0,
    "figure.facecolor": "white",
    "savefig.facecolor": "white",
    "svg.hashsalt": "privplane",
}

# isotropic runs blue, anisotropic orange; unnormalised variants green / red
KIND_COLORS = {
    ("isotropic", True): "#1f77b4",
    ("anisotropic", True): "#ff7f0e",
    ("isotropic", False): "#2ca02c",
    ("anisotropic", False): "#d62728",
}

TILE_INCHES = 1.1
DPI = 150


@contextmanager
def figure_style():
    with mpl.rc_context(STYLE):
        yield


def figure_png(fig: Figure, dpi: int = DPI) -> bytes:
    """PNG bytes for ``fig``; the Software tag is dropped so bytes depend only on content."""
    FigureCanvasAgg(fig)
    buf = io.BytesIO()
    fig.savefig(buf, format="png", dpi=dpi, metadata={"Software": None})
    return buf.getvalue()


def montage_figure(rows, row_labels, col_labels, extent=None) -> Figure:
    nrows, ncols = len(rows), len(rows[0])
    per_row_titles = bool(col_labels) and isinstance(col_labels[0], (list, tuple))
    with figure_style():
        fig = Figure(figsize=(TILE_INCHES * ncols + 1.2, TILE_INCHES * nrows + 0.3))
        axes = fig.subplots(nrows, ncols, squeeze=False)
        for r, row in enumerate(rows):
            ext = None if extent is None else extent[r]
            for c, rgb in enumerate(row):
                ax = axes[r][c]
                kw = {} if ext is None else {"extent": (-ext, ext, -ext, ext)}
                ax.imshow(rgb, interpolation="nearest", **kw)
                ax.set_xticks([])
                ax.set_yticks([])
                label = col_labels[r][c] if per_row_titles else (col_labels[c] if col_labels else "")
                ax.set_title(str(label), pad=2)
                if c == 0:
                    ax.set_ylabel(row_labels[r], rotation=0, ha="right", va="center", fontsize=6)
        fig.subplots_adjust(left=1.1 / (TILE_INCHES * ncols + 1.2), right=0.995, bottom=0.01, top=1 - 0.25 / (TILE_INCHES * nrows + 0.3), wspace=0.05, hspace=0.3)
    return fig


def error_curves_figure(curves, title: str = "") -> Figure:
    """``curves``: list of dicts with keys epochs, mean, std, label, color, and optional per-seed ``runs``."""
    with figure_style():
        fig = Figure(figsize=(3.4, 2.3))
        ax = fig.subplots()
        for cv in curves:
            epochs = np.asarray(cv["epochs"])
            for run in cv.get("runs", []):
                ax.plot(epochs, run, color=cv["color"], alpha=0.25, linewidth=0.6)
            mean, std = np.asarray(cv["mean"]), np.asarray(cv["std"])
            ax.plot(epochs, mean, color=cv["color"], label=cv["label"])
            ax.fill_between(epochs, mean - std, mean + std, color=cv["color"], alpha=0.2, linewidth=0)
        ax.set_xlabel("epochs trained")
        ax.set_ylabel("test reconstruction error")
        if title:
            ax.set_title(title)
        ax.legend(frameon=False)
        fig.tight_layout()
    return fig


def histogram_figure(counts, title: str = "") -> Figure:
    """Polar bar chart of angular counts over [-pi, pi)."""
    counts = np.asarray(counts)
    bins = len(counts)
    with figure_style():
        fig = Figure(figsize=(2.4, 2.4))
        ax = fig.add_subplot(projection="polar")
        theta = -np.pi + (np.arange(bins) + 0.5) * 2 * np.pi / bins
        ax.bar(theta, counts, width=2 * np.pi / bins, color="#444444", edgecolor="white", linewidth=0.3)
        ax.set_yticks([])
        if title:
            ax.set_title(title)
        fig.tight_layout()
    return fig
