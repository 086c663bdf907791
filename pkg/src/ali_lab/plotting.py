"""SVG figure grid for the toy experiment.

One column per run, four rows: data, latent codes against the prior,
reconstructions, and model samples over the mixture density. Output bytes
depend only on the inputs: the SVG id salt is fixed and the date stamp is
dropped.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .mixture import GaussianMixture, log_density  # noqa: E402

ROWS = ("data", "latent", "recon", "samples")
MAX_POINTS = 1000
_EXTENT_X = 1.6
_EXTENT_Z = 4.0


@dataclass(frozen=True)
class PanelData:
    """Everything one figure column shows; missing pieces are ``None``."""

    title: str
    mixture: GaussianMixture
    data: np.ndarray
    labels: np.ndarray
    z: np.ndarray | None = None
    z_labels: np.ndarray | None = None
    x_in: np.ndarray | None = None
    x_hat: np.ndarray | None = None
    samples: np.ndarray | None = None


def _head(a, n=MAX_POINTS):
    return None if a is None else np.asarray(a, dtype=np.float64)[:n]


def _empty(ax, text: str) -> None:
    ax.text(0.5, 0.5, text, ha="center", va="center", transform=ax.transAxes, fontsize=8, color="0.4")


def _density_grid(mix: GaussianMixture, n: int = 241):
    g = np.linspace(-_EXTENT_X, _EXTENT_X, n)
    gx, gy = np.meshgrid(g, g)
    dens = np.exp(log_density(mix, np.column_stack([gx.ravel(), gy.ravel()]))).reshape(n, n)
    return gx, gy, dens


def _draw_column(axes, col: PanelData, density) -> None:
    ax_data, ax_lat, ax_rec, ax_smp = axes
    cmap = plt.get_cmap("tab20")
    k = col.mixture.n_components

    pts, lab = _head(col.data), np.asarray(col.labels)[:MAX_POINTS]
    ax_data.set_title(col.title, fontsize=10)
    if pts.size:
        ax_data.scatter(pts[:, 0], pts[:, 1], s=2, c=lab % 20, cmap=cmap, vmin=0, vmax=19, linewidths=0)
    else:
        _empty(ax_data, "no data")

    t = np.linspace(0, 2 * np.pi, 200)
    for r in (1.0, 2.0, 3.0):
        ax_lat.plot(r * np.cos(t), r * np.sin(t), color="0.6", lw=0.6, ls="--")
    z = _head(col.z)
    if z is not None and z.size:
        zl = np.asarray(col.z_labels)[: z.shape[0]] if col.z_labels is not None else np.zeros(len(z), int)
        ax_lat.scatter(z[:, 0], z[:, 1], s=2, c=zl % 20, cmap=cmap, vmin=0, vmax=19, linewidths=0)
    else:
        _empty(ax_lat, "no encoder")
    ax_lat.set_xlim(-_EXTENT_Z, _EXTENT_Z)
    ax_lat.set_ylim(-_EXTENT_Z, _EXTENT_Z)

    x_in, x_hat = _head(col.x_in, 500), _head(col.x_hat, 500)
    if x_in is not None and x_in.size:
        segs = np.stack([x_in, x_hat], axis=1)
        ax_rec.add_collection(matplotlib.collections.LineCollection(segs, colors="0.7", linewidths=0.4))
        ax_rec.scatter(x_in[:, 0], x_in[:, 1], s=3, c="tab:blue", linewidths=0)
        ax_rec.scatter(x_hat[:, 0], x_hat[:, 1], s=3, c="tab:red", linewidths=0)
    else:
        _empty(ax_rec, "no reconstructions")

    gx, gy, dens = density
    ax_smp.contour(gx, gy, dens, levels=dens.max() * np.array([0.05, 0.5]), colors="0.2", linewidths=0.6, zorder=3)
    s = _head(col.samples)
    if s is not None and s.size:
        ax_smp.scatter(s[:, 0], s[:, 1], s=2, c="tab:green", linewidths=0)
    else:
        _empty(ax_smp, "no samples")
    ax_smp.set_xlabel(f"{k} modes", fontsize=8)

    for ax in (ax_data, ax_rec, ax_smp):
        ax.set_xlim(-_EXTENT_X, _EXTENT_X)
        ax.set_ylim(-_EXTENT_X, _EXTENT_X)
    for ax in axes:
        ax.set_aspect("equal")
        ax.set_xticks([])
        ax.set_yticks([])


def render_figure(columns: list[PanelData], path: str | Path, caption: str = "") -> Path:
    """Write the grid as SVG; identical inputs give identical bytes."""
    if not columns:
        raise ValueError("need at least one column")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with plt.rc_context({"svg.hashsalt": "ali-lab", "svg.fonttype": "none"}):
        fig, axes = plt.subplots(len(ROWS), len(columns), figsize=(2.4 * len(columns), 9.6), squeeze=False)
        density = _density_grid(columns[0].mixture)
        for j, col in enumerate(columns):
            _draw_column(axes[:, j], col, density)
        for i, name in enumerate(ROWS):
            axes[i, 0].set_ylabel(name, fontsize=9)
        if caption:
            fig.text(0.5, 0.01, caption, ha="center", fontsize=8)
        fig.savefig(path, format="svg", metadata={"Date": None})
        plt.close(fig)
    return path


def read_csv_columns(path: Path) -> tuple[list[str], np.ndarray]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    return header, np.array(body, dtype=np.float64).reshape(len(body), len(header))
