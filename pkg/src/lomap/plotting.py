"""Static SVG figures: maze overlays and the gap-scaling log-log plot."""

from __future__ import annotations

import io

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
from matplotlib.patches import Rectangle  # noqa: E402

from .errors import ShapeError  # noqa: E402
from .synthworld.maze import MazeSpec, collision_flags  # noqa: E402

CLEAN_COLOR = "#1f77b4"
ALERT_COLOR = "#d62728"
WALL_COLOR = "#404040"


def _svg_bytes(fig, description: str | None = None) -> bytes:
    # fixed hash salt and no date keep the output byte-stable
    buf = io.BytesIO()
    meta = {"Date": None}
    if description:
        meta["Description"] = description
    with matplotlib.rc_context({"svg.hashsalt": "lomap", "svg.fonttype": "none"}):
        fig.savefig(buf, format="svg", metadata=meta)
    plt.close(fig)
    return buf.getvalue()


def maze_overlay_svg(maze: MazeSpec, paths=(), title: str | None = None, alpha: float = 0.5,
                     description: str | None = None) -> bytes:
    """Walls, start/goal markers and (n, T, 2) position paths colored by collision verdict.

    Colliding paths are drawn in ``ALERT_COLOR`` on top of the clean ones.
    """
    paths = [np.asarray(p, dtype=float) for p in paths]
    for p in paths:
        if p.ndim != 2 or p.shape[1] != 2:
            raise ShapeError(f"paths must be (T, 2) position arrays, got {p.shape}")
    fig, ax = plt.subplots(figsize=(5, 5 * maze.rows / maze.cols))
    cs = maze.cell_size
    for r, c in zip(*np.nonzero(maze.walls)):
        ax.add_patch(Rectangle((c * cs, r * cs), cs, cs, color=WALL_COLOR, linewidth=0))
    flags = [bool(collision_flags(p[None], maze)[0]) for p in paths]
    for bad in (False, True):
        for p, f in zip(paths, flags):
            if f == bad:
                ax.plot(p[:, 0], p[:, 1], color=ALERT_COLOR if bad else CLEAN_COLOR, lw=0.8, alpha=alpha)
    s, g = maze.start_position, maze.goal_position
    ax.plot(*s, marker="o", color="#2ca02c", ms=8, label="start")
    ax.plot(*g, marker="*", color="#ff7f0e", ms=12, label="goal")
    if paths:
        ax.plot([], [], color=CLEAN_COLOR, label=f"clean ({flags.count(False)})")
        ax.plot([], [], color=ALERT_COLOR, label=f"collides ({flags.count(True)})")
    x0, y0, x1, y1 = 0.0, 0.0, maze.cols * cs, maze.rows * cs
    ax.set_xlim(x0, x1)
    ax.set_ylim(y1, y0)
    ax.set_aspect("equal")
    ax.set_xticks([])
    ax.set_yticks([])
    ax.legend(loc="upper right", fontsize=7)
    if title:
        ax.set_title(title)
    return _svg_bytes(fig, description)


def gap_scaling_svg(dims, gaps, stderr=None, slope: float | None = None, intercept: float | None = None,
                    title: str = "guidance gap vs dimension", description: str | None = None) -> bytes:
    """Log-log scatter of the gap against dimension with the fitted line."""
    dims = np.asarray(dims, dtype=float)
    gaps = np.asarray(gaps, dtype=float)
    fig, ax = plt.subplots(figsize=(5, 4))
    pos = gaps > 0
    if stderr is not None:
        ax.errorbar(dims[pos], gaps[pos], yerr=np.asarray(stderr, dtype=float)[pos], fmt="o", capsize=3,
                    label="measured")
    else:
        ax.plot(dims[pos], gaps[pos], "o", label="measured")
    if slope is not None and intercept is not None and np.isfinite(slope):
        grid = np.geomspace(dims.min(), dims.max(), 50)
        ax.plot(grid, np.exp(intercept) * grid ** slope, "-", label=f"fit slope {slope:.3f}")
    if pos.any():
        ax.set_xscale("log")
        ax.set_yscale("log")
    else:
        # nothing to place on a log axis; a degenerate run gets an annotated empty frame
        ax.text(0.5, 0.5, "no positive gap", transform=ax.transAxes, ha="center")
    ax.set_xlabel("dimension d")
    ax.set_ylabel("gap")
    ax.set_title(title)
    if ax.get_legend_handles_labels()[0]:
        ax.legend()
    return _svg_bytes(fig, description)


def sweep_svg(rows, title: str = "artifact ratio vs plans", description: str | None = None) -> bytes:
    """Artifact ratio and any-collision fraction per method against plan count."""
    fig, ax = plt.subplots(figsize=(5, 4))
    for method in sorted({r["method"] for r in rows}):
        sel = sorted((r for r in rows if r["method"] == method), key=lambda r: r["plans"])
        x = [r["plans"] for r in sel]
        ax.plot(x, [r["artifact_ratio"] for r in sel], "o-", label=f"{method} per plan")
        ax.plot(x, [r["any_collision"] for r in sel], "s--", label=f"{method} any")
    ax.set_xlabel("plans per pair")
    ax.set_ylabel("fraction")
    ax.set_ylim(0, 1.05)
    ax.set_title(title)
    ax.legend(fontsize=7)
    return _svg_bytes(fig, description)
