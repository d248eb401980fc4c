"""Figures written next to the CSV output: energy history and crack snapshots."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
from matplotlib.collections import LineCollection  # noqa: E402
from matplotlib.tri import Triangulation  # noqa: E402

from .mesh import CrackSet, Mesh  # noqa: E402
from .solver import Field  # noqa: E402


def plot_energies(rows: list[dict], path, title: str = "") -> Path:
    """Bulk, surface, penalty and total energy against time."""
    path = Path(path)
    t = [r["t"] for r in rows]
    fig, ax = plt.subplots(figsize=(6, 4))
    for key in ("bulk", "surface", "penalty", "total"):
        ax.plot(t, [r[key] for r in rows], label=key, marker="." if len(t) < 60 else None)
    ax.set_xlabel("t")
    ax.set_ylabel("energy")
    if title:
        ax.set_title(title)
    ax.legend()
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    return path


def _outline(mesh: Mesh) -> np.ndarray:
    return mesh.edge_segments(np.flatnonzero(mesh.is_boundary_edge))


def plot_frame(mesh: Mesh, crack: CrackSet, field: Field | None, path, title: str = "") -> Path:
    """Crack polylines over the mesh outline with a grayscale displacement map.

    The displacement is drawn per triangle corner, so jumps across the crack
    stay visible.
    """
    path = Path(path)
    fig, ax = plt.subplots(figsize=(5, 5))
    if field is not None:
        cd = field.dofmap.corner_dofs
        pts = mesh.vertices[mesh.triangles].reshape(-1, 2)
        tri = Triangulation(pts[:, 0], pts[:, 1], np.arange(len(pts)).reshape(-1, 3))
        vals = field.values[cd].ravel()
        ax.tripcolor(tri, vals, shading="gouraud", cmap="gray")
    ax.add_collection(LineCollection(_outline(mesh), colors="black", linewidths=1.0))
    if len(crack):
        ax.add_collection(LineCollection(mesh.edge_segments(crack.edge_ids), colors="red",
                                         linewidths=2.0))
    lo, hi = mesh.vertices.min(0), mesh.vertices.max(0)
    pad = 0.02 * float((hi - lo).max())
    ax.set_xlim(lo[0] - pad, hi[0] + pad)
    ax.set_ylim(lo[1] - pad, hi[1] + pad)
    ax.set_aspect("equal")
    ax.set_axis_off()
    if title:
        ax.set_title(title)
    fig.savefig(path, format=path.suffix.lstrip(".") or "svg")
    plt.close(fig)
    return path


def plot_release_rates(rows: list[dict], path) -> Path:
    """Release rate per step with the unit toughness line."""
    path = Path(path)
    fig, ax = plt.subplots(figsize=(6, 4))
    adv = [r for r in rows if r.get("advancing")]
    still = [r for r in rows if not r.get("advancing")]
    ax.plot([r["t"] for r in still], [r["G"] for r in still], "o", ms=3, label="stationary")
    ax.plot([r["t"] for r in adv], [r["G"] for r in adv], "s", ms=4, label="advancing")
    ax.axhline(1.0, color="black", lw=0.8)
    ax.set_xlabel("t")
    ax.set_ylabel("release rate G")
    ax.legend()
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    return path
