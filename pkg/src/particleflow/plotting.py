"""Deterministic SVG figures for runs.

Figures are written as standalone SVG with a fixed hash salt and no
creation timestamp, so rendering the same inputs twice produces the same
bytes. The scatter view overlays particles on density contours whose
levels enclose fixed fractions of the target mass.
"""

from __future__ import annotations

import os
from pathlib import Path

import numpy as np

os.environ.setdefault("MPLBACKEND", "Agg")

import matplotlib  # noqa: E402

matplotlib.use("Agg", force=False)
import matplotlib.pyplot as plt  # noqa: E402

__all__ = ["render_curves", "render_scatter"]

_RC = {
    "svg.hashsalt": "particleflow",
    "svg.fonttype": "path",
    "figure.dpi": 100,
    "font.size": 9,
    "axes.spines.top": False,
    "axes.spines.right": False,
}

_MASS_FRACTIONS = (0.1, 0.3, 0.5, 0.7, 0.9)


def _save(fig, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if path.suffix.lower() == ".svg":
        fig.savefig(path, format="svg", metadata={"Date": None})
    else:
        fig.savefig(path)
    plt.close(fig)


def render_scatter(positions, path, grid=None, title: str = "") -> None:
    """Scatter a 2-D particle cloud, optionally over target contours.

    Args:
        positions: (M, 2) array or an object with a .positions attribute.
        path: output file; .svg gives byte-stable output.
        grid: optional GroundTruthGrid supplying density contours at the
            {10, 30, 50, 70, 90}% mass levels.
        title: optional axes title.
    """
    pos = np.asarray(getattr(positions, "positions", positions), dtype=float)
    if pos.ndim != 2 or pos.shape[1] != 2:
        raise ValueError(f"scatter needs (M, 2) positions, got shape {pos.shape}")
    with plt.rc_context(_RC):
        fig, ax = plt.subplots(figsize=(5.0, 4.6))
        if grid is not None:
            levels = grid.contour_levels(_MASS_FRACTIONS)
            ax.contour(grid.xs, grid.ys, grid.density, levels=levels,
                       colors="0.55", linewidths=0.7)
        ax.scatter(pos[:, 0], pos[:, 1], s=9, c="#B4342C", alpha=0.8, linewidths=0)
        ax.set_xlabel("dim0")
        ax.set_ylabel("dim1")
        if title:
            ax.set_title(title)
        ax.set_aspect("equal", adjustable="datalim")
        _save(fig, path)


def render_curves(rows, path) -> None:
    """Metric traces over iterations: one panel per metric.

    Args:
        rows: iterable of (iteration, metric, seed, value), e.g. the rows
            of a metrics CSV. Each seed draws a thin trace; the cross-seed
            mean draws on top.
        path: output file; .svg gives byte-stable output.
    """
    rows = list(rows)
    if not rows:
        raise ValueError("no records to plot")
    metrics = sorted({r[1] for r in rows})
    ncols = min(3, len(metrics))
    nrows = (len(metrics) + ncols - 1) // ncols
    with plt.rc_context(_RC):
        fig, axes = plt.subplots(nrows, ncols, squeeze=False,
                                 figsize=(4.2 * ncols, 3.2 * nrows))
        for k, metric in enumerate(metrics):
            ax = axes[k // ncols][k % ncols]
            per_seed = {}
            for it, name, seed, value in rows:
                if name == metric:
                    per_seed.setdefault(seed, []).append((it, value))
            totals = {}
            for seed in sorted(per_seed):
                series = sorted(per_seed[seed])
                its = [p[0] for p in series]
                vals = [p[1] for p in series]
                ax.plot(its, vals, color="0.7", linewidth=0.8)
                for it, value in series:
                    totals.setdefault(it, []).append(value)
            mean_its = sorted(totals)
            ax.plot(mean_its, [float(np.mean(totals[it])) for it in mean_its],
                    color="#B4342C", linewidth=1.6, label="mean")
            ax.set_xlabel("iteration")
            ax.set_ylabel(metric)
            ax.legend(frameon=False, fontsize=8)
        for k in range(len(metrics), nrows * ncols):
            axes[k // ncols][k % ncols].axis("off")
        fig.tight_layout()
        _save(fig, path)
