"""Flux-map figures rendered to SVG next to the delimited outputs.

Contours are extracted by matplotlib's triangulation contouring (marching
through the P1 triangles), with the plasma boundary level stroked
distinctly and the limiter drawn when present.  Output is deterministic:
the SVG hash salt is pinned and timestamp metadata is omitted.
"""

from __future__ import annotations

from typing import Optional

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import matplotlib.tri as mtri
import numpy as np

from .flux import PlasmaState
from .mesh import TriangularMesh

matplotlib.rcParams["svg.hashsalt"] = "eqrec"


def flux_figure(
    mesh: TriangularMesh,
    psi: np.ndarray,
    state: Optional[PlasmaState] = None,
    levels: int = 21,
    title: Optional[str] = None,
):
    tri = mtri.Triangulation(
        mesh.nodes[:, 0], mesh.nodes[:, 1], mesh.triangles
    )
    fig, ax = plt.subplots(figsize=(5.0, 6.0))
    ax.tricontour(tri, psi, levels=levels, colors="tab:blue", linewidths=0.6)
    if state is not None and state.span > 0:
        ax.tricontour(
            tri, psi, levels=[state.psi_b], colors="tab:red", linewidths=2.0
        )
        ax.plot(state.axis.r, state.axis.z, "+", color="tab:red", markersize=8)
        if state.xpoint is not None:
            ax.plot(state.xpoint.r, state.xpoint.z, "x", color="k", markersize=8)
    if mesh.limiter is not None:
        lim = np.vstack([mesh.limiter, mesh.limiter[:1]])
        ax.plot(lim[:, 0], lim[:, 1], "k-", linewidth=1.2)
    bnd = mesh.nodes[np.append(mesh.boundary, mesh.boundary[0])]
    ax.plot(bnd[:, 0], bnd[:, 1], "-", color="0.3", linewidth=1.0)
    ax.set_xlabel("r [m]")
    ax.set_ylabel("z [m]")
    ax.set_aspect("equal")
    if title:
        ax.set_title(title)
    fig.tight_layout()
    return fig


def save_svg(fig, path: str) -> None:
    """Write the figure as SVG with reproducible bytes (no date metadata)."""
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
