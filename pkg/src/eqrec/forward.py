"""Forward free-boundary solver: plasma-current load matrix and the
fixed-point iteration that alternates flux solves with plasma-domain
updates.

The load matrix D maps stacked profile coefficients to the P1 load vector
of the toroidal current source restricted to the plasma region, so one
fixed-point step is a single back-substitution against the stored
stiffness factorization.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import DegeneratePlasmaError
from .fem import StiffnessSystem
from .flux import PlasmaState, analyze, cut_polygon, normalize
from .mesh import TriangularMesh
from .profiles import ProfileCoefficients, ReducedBasis

# midpoint-of-edges rule: degree-2 exact, weights |T|/3
_EDGE_MID = np.array(
    [[0.5, 0.5, 0.0], [0.0, 0.5, 0.5], [0.5, 0.0, 0.5]]
)


@dataclass
class PlasmaCurrentMatrix:
    """Load matrix D (n x 3m): alpha-block carries r*phi_i(psi_bar),
    beta-block carries phi_i(psi_bar)/r, density block is zero because the
    electron density does not source the equilibrium."""

    D: np.ndarray
    m: int


def _accumulate(
    D: np.ndarray,
    basis: ReducedBasis,
    nodes_idx: np.ndarray,
    hat: np.ndarray,
    r: np.ndarray,
    psi_bar: np.ndarray,
    w: np.ndarray,
) -> None:
    """Scatter quadrature contributions into D.

    nodes_idx (q, 3) parent vertex ids, hat (q, 3) parent hat values,
    r, psi_bar, w (q,) radius, normalized flux and weight per point.
    """
    inside = psi_bar <= 1.0 + 1e-12
    if not inside.any():
        return
    nodes_idx = nodes_idx[inside]
    hat = hat[inside]
    r = r[inside]
    w = w[inside]
    phi = basis.design(np.clip(psi_bar[inside], 0.0, 1.0))
    m = basis.m
    wa = (w * r)[:, None] * phi
    wb = (w / r)[:, None] * phi
    for v in range(3):
        np.add.at(D[:, :m], nodes_idx[:, v], hat[:, v][:, None] * wa)
        np.add.at(D[:, m : 2 * m], nodes_idx[:, v], hat[:, v][:, None] * wb)


def assemble_plasma_current(
    mesh: TriangularMesh, state: PlasmaState, basis: ReducedBasis
) -> PlasmaCurrentMatrix:
    """Assemble D for the current plasma state.

    Fully-plasma triangles use the mid-edge rule directly; cut triangles
    are reduced to the exact sub-polygon where the flux exceeds the
    boundary value, fan-triangulated, and integrated with the same rule.
    """
    n = len(mesh.nodes)
    m = basis.m
    D = np.zeros((n, 3 * m))
    frac = state.mask
    tris = mesh.triangles
    pb_nodes = state.psi_bar[tris]

    full = frac >= 1.0 - 1e-14
    if full.any():
        t_idx = np.nonzero(full)[0]
        p = mesh.nodes[tris[t_idx]]
        areas = mesh.signed_areas()[t_idx]
        for q in range(3):
            lam = _EDGE_MID[q]
            pts = np.einsum("v,tvx->tx", lam, p)
            pbq = pb_nodes[t_idx] @ lam
            _accumulate(
                D,
                basis,
                tris[t_idx],
                np.tile(lam, (len(t_idx), 1)),
                pts[:, 0],
                pbq,
                areas / 3.0,
            )

    cut = (~full) & (frac > 1e-14)
    for t in np.nonzero(cut)[0]:
        p = mesh.nodes[tris[t]]
        poly = cut_polygon(p, 1.0 - pb_nodes[t])
        if poly is None:
            continue
        gr, gz = mesh.grad_coeffs()
        base = mesh.nodes[tris[t]]
        sub_pts = []
        sub_w = []
        for k in range(1, len(poly) - 1):
            tri = np.array([poly[0], poly[k], poly[k + 1]])
            d1, d2 = tri[1] - tri[0], tri[2] - tri[0]
            area = 0.5 * abs(d1[0] * d2[1] - d1[1] * d2[0])
            for lam in _EDGE_MID:
                sub_pts.append(lam @ tri)
                sub_w.append(area / 3.0)
        sub_pts = np.asarray(sub_pts)
        sub_w = np.asarray(sub_w)
        # parent hat values at the sub-quadrature points
        hat = np.empty((len(sub_pts), 3))
        for v in range(3):
            hat[:, v] = (
                1.0
                + gr[t, v] * (sub_pts[:, 0] - base[v, 0])
                + gz[t, v] * (sub_pts[:, 1] - base[v, 1])
            )
        pbq = hat @ pb_nodes[t]
        _accumulate(
            D,
            basis,
            np.tile(tris[t], (len(sub_pts), 1)),
            hat,
            sub_pts[:, 0],
            pbq,
            sub_w,
        )
    return PlasmaCurrentMatrix(D=D, m=m)


def plasma_current(current: PlasmaCurrentMatrix, u: np.ndarray) -> float:
    """Total toroidal plasma current.

    The P1 hat functions sum to one, so testing the load vector against
    the constant-1 coefficient vector integrates the source exactly as the
    assembly quadrature saw it.
    """
    return float((current.D @ np.asarray(u, dtype=float)).sum())


def picard_step(
    system: StiffnessSystem,
    current: PlasmaCurrentMatrix,
    u: np.ndarray,
    h: np.ndarray,
) -> np.ndarray:
    """One fixed-point update: solve with the frozen plasma-current load."""
    return system.solve(current.D @ np.asarray(u, dtype=float), h)


def initial_plasma_state(
    mesh: TriangularMesh, psi: np.ndarray, limiter: Optional[np.ndarray]
) -> PlasmaState:
    """Cold-start guess: the whole limiter interior (or the whole domain)
    counts as plasma, with the normalized flux stretched over the guess
    region so the first load assembly has a usable profile argument."""
    if limiter is not None:
        from matplotlib.path import Path

        inside = Path(limiter).contains_points(mesh.centroids())
        mask = inside.astype(float)
        node_sel = np.unique(mesh.triangles[inside])
    else:
        mask = np.ones(len(mesh.triangles))
        node_sel = np.arange(len(mesh.nodes))
    psi = np.asarray(psi, dtype=float)
    if len(node_sel) == 0:
        raise DegeneratePlasmaError("limiter contains no triangle centroids")
    hi = float(psi[node_sel].max())
    lo = float(psi[node_sel].min())
    span = hi - lo
    if span <= 0:
        psi_bar = np.zeros(len(psi))
        hi, lo = 1.0, 0.0
    else:
        psi_bar = np.clip((psi - hi) / (lo - hi), 0.0, 1.0)
    imax = node_sel[int(np.argmax(psi[node_sel]))]
    return PlasmaState(
        psi_axis=hi,
        axis=None if span <= 0 else tuple(mesh.nodes[imax]),  # type: ignore[arg-type]
        psi_b=lo if span > 0 else hi - 1.0,
        boundary_kind="limiter" if limiter is not None else "xpoint",
        xpoint=None,
        psi_bar=psi_bar,
        mask=mask,
    )


@dataclass
class ForwardResult:
    psi: np.ndarray
    state: Optional[PlasmaState]
    iterations: int
    converged: bool
    residual: float
    current_matrix: Optional[PlasmaCurrentMatrix] = None


def solve_forward(
    system: StiffnessSystem,
    basis: ReducedBasis,
    u: ProfileCoefficients | np.ndarray,
    h: np.ndarray,
    psi0: Optional[np.ndarray] = None,
    tol: float = 1e-8,
    max_iter: int = 50,
    relax: float = 1.0,
    limiter: Optional[np.ndarray] = None,
    xpoint_search: bool = True,
) -> ForwardResult:
    """Fixed-point solve of the free-boundary problem for known profiles.

    Iterates flux -> plasma state -> load matrix -> flux until the sup-norm
    relative change drops below tol.  A pure vacuum source (zero a and b
    blocks) returns the boundary-driven solution immediately with no
    plasma state.
    """
    if tol <= 0:
        raise ValueError("tolerance must be positive")
    if isinstance(u, ProfileCoefficients):
        u = u.stacked()
    u = np.asarray(u, dtype=float)
    m = basis.m
    mesh = system.mesh
    if limiter is None:
        limiter = mesh.limiter

    vacuum_source = not np.any(u[: 2 * m])
    if psi0 is None:
        psi = system.solve(None, h)
        state = None if vacuum_source else initial_plasma_state(mesh, psi, limiter)
    else:
        psi = np.asarray(psi0, dtype=float).copy()
        state = None if vacuum_source else analyze(
            mesh, psi, limiter=limiter, xpoint_search=xpoint_search
        )
    if vacuum_source:
        return ForwardResult(
            psi=psi,
            state=None,
            iterations=1,
            converged=True,
            residual=0.0,
            current_matrix=PlasmaCurrentMatrix(
                D=np.zeros((len(mesh.nodes), 3 * m)), m=m
            ),
        )

    delta = np.inf
    current = None
    for it in range(1, max_iter + 1):
        current = assemble_plasma_current(mesh, state, basis)
        psi_new = picard_step(system, current, u, h)
        if relax != 1.0:
            psi_new = relax * psi_new + (1.0 - relax) * psi
        delta = float(
            np.max(np.abs(psi_new - psi))
            / max(np.max(np.abs(psi_new)), 1e-12)
        )
        psi = psi_new
        state = analyze(mesh, psi, limiter=limiter, xpoint_search=xpoint_search)
        if delta < tol:
            # re-evaluate D at the converged flux so the returned pair
            # satisfies the discrete fixed-point residual
            current = assemble_plasma_current(mesh, state, basis)
            return ForwardResult(
                psi=psi,
                state=state,
                iterations=it,
                converged=True,
                residual=delta,
                current_matrix=current,
            )
    return ForwardResult(
        psi=psi,
        state=state,
        iterations=max_iter,
        converged=False,
        residual=delta,
        current_matrix=current,
    )
