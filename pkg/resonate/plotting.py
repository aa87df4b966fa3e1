"""SVG figures for run directories.

Each function takes results already computed by the pipeline modules and
writes one deterministic SVG through :func:`resonate.outputs.save_svg`.
"""

import logging
from typing import Optional

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np
import pandas as pd
from matplotlib.colors import ListedColormap

from resonate.fem import DiscreteField
from resonate.mesh import REGIONS, Mesh
from resonate.outputs import save_svg

logger = logging.getLogger(__name__)

REGION_COLORS = ("#9ecae1", "#fdae6b", "#e5e5e5", "#bcbddc")


def plot_mesh(mesh: Mesh, path, title: Optional[str] = None):
    """Triangles coloured by region code."""
    fig, ax = plt.subplots(figsize=(6, 6))
    cmap = ListedColormap(REGION_COLORS)
    ax.tripcolor(
        mesh.vertices[:, 0], mesh.vertices[:, 1], mesh.triangles,
        facecolors=mesh.regions.astype(float), cmap=cmap, vmin=-0.5, vmax=len(REGIONS) - 0.5,
        edgecolors="k", linewidth=0.1,
    )
    ax.set_aspect("equal")
    ax.set_title(title or f"{mesh.n_triangles} triangles")
    return save_svg(fig, path)


def plot_sign_pattern(field_: DiscreteField, path, title: Optional[str] = None):
    """Sign of a real field at the vertices; the nodal set shows as the colour boundary.

    Args:
        field_: field whose vertex values are plotted.
        path: output SVG.
        title: axes title.
    """
    mesh = field_.mesh
    values = np.real(field_.vertex_values())
    scale = np.max(np.abs(values)) or 1.0
    fig, ax = plt.subplots(figsize=(6, 6))
    ax.tripcolor(mesh.vertices[:, 0], mesh.vertices[:, 1], mesh.triangles, values / scale,
                 cmap="RdBu_r", vmin=-1, vmax=1, shading="gouraud")
    ax.tricontour(mesh.vertices[:, 0], mesh.vertices[:, 1], mesh.triangles, values, levels=[0.0],
                  colors="k", linewidths=0.6)
    ax.set_aspect("equal")
    if title:
        ax.set_title(title)
    return save_svg(fig, path)


def plot_energy(table: pd.DataFrame, path, rate: Optional[float] = None, amplitude: Optional[float] = None):
    """Local energy on a log axis with the fitted exponential, if given."""
    fig, ax = plt.subplots(figsize=(7, 4))
    ax.semilogy(table["t"], table["local_energy"], lw=1.0, label="local energy")
    if "projected_amplitude" in table:
        ax.semilogy(table["t"], table["projected_amplitude"], "--", lw=0.8, label="projector prediction")
    if rate is not None and amplitude is not None:
        ax.semilogy(table["t"], amplitude * np.exp(-rate * table["t"]), ":", lw=1.0, label=f"fit, rate {rate:.3e}")
    ax.set_xlabel("t")
    ax.set_ylabel("energy")
    ax.legend()
    return save_svg(fig, path)


def plot_rate_fit(x, y, slope: float, intercept: float, path, xlabel: str, ylabel: str,
                  target: Optional[float] = None, excluded=None):
    """Scatter of a logarithmic quantity against its abscissa with the fitted line.

    Rows in ``excluded`` are drawn hollow so flagged points stay visible.
    """
    x, y = np.asarray(x, dtype=float), np.asarray(y, dtype=float)
    excluded = np.zeros(len(x), dtype=bool) if excluded is None else np.asarray(excluded, dtype=bool)
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(x[~excluded], y[~excluded], "o", label="fitted rows")
    if excluded.any():
        ax.plot(x[excluded], y[excluded], "o", mfc="none", label="flagged rows")
    grid = np.linspace(np.nanmin(x), np.nanmax(x), 50)
    ax.plot(grid, slope * grid + intercept, "-", label=f"slope {slope:.4g}")
    if target is not None:
        ax.plot(grid, target * (grid - grid.mean()) + slope * grid.mean() + intercept, "--",
                label=f"target {target:.4g}")
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    ax.legend()
    return save_svg(fig, path)
