"""SVG figures for experiment reports (matplotlib, Agg backend, byte-stable output)."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .field import Grid  # noqa: E402

plt.rcParams["svg.hashsalt"] = "homoglab"
plt.rcParams["svg.fonttype"] = "path"


def _save(fig, path) -> None:
    fig.savefig(path, format="svg", metadata={"Date": None}, bbox_inches="tight")
    plt.close(fig)


def loglog(path, series: dict, xlabel: str, ylabel: str, title: str = "") -> None:
    """Log-log plot; ``series`` maps labels to ``(x, y)`` pairs."""
    fig, ax = plt.subplots(figsize=(5, 4))
    for label, (x, y) in series.items():
        x, y = np.asarray(x, float), np.asarray(y, float)
        keep = (x > 0) & (y > 0)
        ax.loglog(x[keep], y[keep], "o-", label=label, ms=4)
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    if title:
        ax.set_title(title)
    ax.grid(True, which="both", lw=0.3)
    ax.legend(fontsize=8)
    _save(fig, path)


def profile_1d(path, grid: Grid, curves: dict, xlabel: str = "x", ylabel: str = "u") -> None:
    fig, ax = plt.subplots(figsize=(5, 3.5))
    x = grid.axes()[0]
    for label, y in curves.items():
        ax.plot(x, np.asarray(y).ravel(), label=label, lw=1)
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    ax.legend(fontsize=8)
    _save(fig, path)


def heatmap(path, grid: Grid, u, active=None, title: str = "") -> None:
    """Solution heatmap with the contact set outlined (2D) or shaded (1D)."""
    if grid.dim == 1:
        x = grid.axes()[0]
        fig, ax = plt.subplots(figsize=(5, 3.5))
        ax.plot(x, np.asarray(u).ravel(), lw=1, label="u")
        if active is not None:
            act = np.asarray(active).ravel().astype(bool)
            ax.fill_between(x, 0, 1, where=act, transform=ax.get_xaxis_transform(), alpha=0.15, label="contact")
        ax.legend(fontsize=8)
    else:
        fig, ax = plt.subplots(figsize=(5, 4.5))
        x, y = grid.axes()
        img = ax.imshow(
            np.asarray(u).reshape(grid.shape).T, origin="lower", extent=(x[0], x[-1], y[0], y[-1]), cmap="viridis"
        )
        fig.colorbar(img, ax=ax, shrink=0.8)
        if active is not None:
            ax.contour(x, y, np.asarray(active).reshape(grid.shape).T.astype(float), levels=[0.5], colors="white", linewidths=0.8)
        ax.set_aspect("equal")
    if title:
        ax.set_title(title)
    _save(fig, path)


def flatness(path, rows) -> None:
    r = [row["r"] for row in rows]
    v = [row["flatness"] for row in rows]
    loglog(path, {"normalized flatness": (r, v)}, "r", "min_h |u - h|_inf / r^2")
