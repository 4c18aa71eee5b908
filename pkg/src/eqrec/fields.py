"""Physical fields derived from a converged flux map: magnetic field
components, toroidal current density, and regular-lattice sampling for
export."""

from __future__ import annotations

from typing import Optional, Sequence

import numpy as np

from .errors import OutsideMeshError
from .flux import PlasmaState
from .mesh import TriangularMesh
from .profiles import ProfileCoefficients, ReducedBasis, eval_profile, f_profile


def toroidal_current_density(
    mesh: TriangularMesh,
    state: PlasmaState,
    basis: ReducedBasis,
    u: ProfileCoefficients,
    p,
) -> float:
    """j_phi at a point: r*A(psi_bar) + B(psi_bar)/r inside the plasma, 0
    outside."""
    hit = mesh.locate(p)
    if hit is None:
        raise OutsideMeshError(f"point ({p[0]}, {p[1]}) is outside the mesh")
    t, lam = hit
    pb = float(state.psi_bar[mesh.triangles[t]] @ lam)
    if pb > 1.0:
        return 0.0
    pb = min(max(pb, 0.0), 1.0)
    r = float(p[0])
    return r * eval_profile(basis, u.a, pb) + eval_profile(basis, u.b, pb) / r


def toroidal_field(
    basis: ReducedBasis,
    b: Sequence[float],
    f0: float,
    state: Optional[PlasmaState],
    psi_bar_at_p: float,
    r: float,
) -> float:
    """B_phi = f(psi_bar)/r inside the plasma, f0/r in the vacuum region."""
    if state is None or psi_bar_at_p > 1.0:
        return f0 / r
    f = f_profile(basis, b, state.psi_axis, state.psi_b, f0)
    return f(min(max(psi_bar_at_p, 0.0), 1.0)) / r


def field_grid(
    mesh: TriangularMesh,
    psi: np.ndarray,
    state: Optional[PlasmaState],
    basis: ReducedBasis,
    u: ProfileCoefficients,
    f0: float,
    nr: int = 64,
    nz: int = 64,
) -> dict[str, np.ndarray]:
    """Sample B_r, B_z, B_phi and j_phi on a regular lattice.

    Lattice points outside the mesh get NaN values.  Returns flat arrays
    in row-major (r outer, z inner) order.
    """
    rlo, zlo = mesh.nodes.min(axis=0)
    rhi, zhi = mesh.nodes.max(axis=0)
    rs = np.linspace(rlo, rhi, nr)
    zs = np.linspace(zlo, zhi, nz)
    gr, gz = mesh.gradient(psi)
    out = {
        k: np.full(nr * nz, np.nan)
        for k in ("r", "z", "B_r", "B_z", "B_phi", "j_phi")
    }
    fcall = None
    if state is not None:
        fcall = f_profile(basis, u.b, state.psi_axis, state.psi_b, f0)
    k = 0
    for r in rs:
        for z in zs:
            out["r"][k] = r
            out["z"][k] = z
            hit = mesh.locate((r, z))
            if hit is not None:
                t, lam = hit
                out["B_r"][k] = -gz[t] / r
                out["B_z"][k] = gr[t] / r
                pb = (
                    float(state.psi_bar[mesh.triangles[t]] @ lam)
                    if state is not None
                    else 2.0
                )
                if pb > 1.0 or fcall is None:
                    out["B_phi"][k] = f0 / r
                    out["j_phi"][k] = 0.0
                else:
                    pb = min(max(pb, 0.0), 1.0)
                    out["B_phi"][k] = fcall(pb) / r
                    out["j_phi"][k] = r * eval_profile(
                        basis, u.a, pb
                    ) + eval_profile(basis, u.b, pb) / r
            k += 1
    return out
