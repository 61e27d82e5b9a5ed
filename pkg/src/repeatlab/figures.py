"""Matplotlib renderings for ``repeatlab report``.

Only already-aggregated numbers are drawn here. Each figure is written as a PNG
with the software/date metadata stripped, so re-running a report on the same
directory reproduces the same bytes on the same matplotlib build.
"""

from __future__ import annotations

import math
from typing import Dict, Mapping, Sequence, Tuple

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from repeatlab.errors import OutputError, PlottingError  # noqa: E402

_META = {"Software": None}


def _save(fig, path) -> None:
    try:
        fig.savefig(path, dpi=100, metadata=_META)
    except OSError as exc:
        raise OutputError(f"cannot write figure {path}: {exc.strerror or exc}") from exc
    finally:
        plt.close(fig)


def line_figure(curves: Mapping[str, Tuple[Sequence[float], Sequence[float]]], path, xlabel: str, ylabel: str,
                title: str = "", logx: bool = False, logy: bool = False, hline: float = None) -> None:
    """One line per label; ``curves`` maps label -> (x, y)."""
    if not curves:
        raise PlottingError("no curves to draw")
    fig, ax = plt.subplots(figsize=(6.4, 4.0))
    for label, (x, y) in curves.items():
        if len(x) == 0:
            raise PlottingError(f"series {label!r} is empty")
        ax.plot(x, y, label=label, linewidth=1.4)
    if hline is not None:
        ax.axhline(hline, color="grey", linestyle=":", linewidth=1)
    if logx:
        ax.set_xscale("log")
    if logy:
        ax.set_yscale("log")
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    if title:
        ax.set_title(title)
    ax.grid(alpha=0.3)
    ax.legend(fontsize=7, loc="best")
    fig.tight_layout()
    _save(fig, path)


def heatmap_figure(panels: Dict[str, np.ndarray], row_ticks: Sequence[float], col_ticks: Sequence[float], path,
                   row_label: str = "first-layer scale", col_label: str = "later-layer scale") -> None:
    """Side-by-side accuracy heatmaps sharing one colour scale in [0, 1]."""
    if not panels:
        raise PlottingError("no heatmap panels")
    fig, axes = plt.subplots(1, len(panels), figsize=(3.6 * len(panels), 3.4), squeeze=False)
    for ax, (name, grid) in zip(axes[0], panels.items()):
        im = ax.imshow(grid, vmin=0.0, vmax=1.0, cmap="viridis", origin="lower")
        ax.set_xticks(range(len(col_ticks)), [f"{v:g}" for v in col_ticks])
        ax.set_yticks(range(len(row_ticks)), [f"{v:g}" for v in row_ticks])
        ax.set_xlabel(col_label)
        ax.set_ylabel(row_label)
        ax.set_title(name)
        for (i, j), v in np.ndenumerate(grid):
            if math.isfinite(v):
                ax.text(j, i, f"{v:.2f}", ha="center", va="center", fontsize=7,
                        color="white" if v < 0.6 else "black")
    fig.colorbar(im, ax=axes[0].tolist(), shrink=0.8, label="final test accuracy")
    _save(fig, path)


def interval_figure(labels: Sequence[str], est: Sequence[float], lo: Sequence[float], hi: Sequence[float],
                    passed: Sequence[bool], path) -> None:
    """Point estimates with confidence intervals, coloured by pass/fail."""
    if not labels:
        raise PlottingError("no estimates to draw")
    y = np.arange(len(labels))
    est, lo, hi = (np.asarray(v, dtype=float) for v in (est, lo, hi))
    fig, ax = plt.subplots(figsize=(6.4, 0.35 * len(labels) + 1.2))
    colours = ["#2ca02c" if p else "#d62728" for p in passed]
    ax.errorbar(est, y, xerr=[np.maximum(est - lo, 0), np.maximum(hi - est, 0)], fmt="none", ecolor="grey")
    ax.scatter(est, y, c=colours, zorder=3)
    ax.set_yticks(y, labels, fontsize=7)
    ax.set_xlabel("estimate (95% Wilson interval)")
    ax.grid(alpha=0.3, axis="x")
    fig.tight_layout()
    _save(fig, path)
