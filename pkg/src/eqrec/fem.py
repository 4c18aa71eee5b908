"""P1 finite-element discretization of the axisymmetric elliptic operator
div((1/(mu0 r)) grad psi), with Dirichlet data on the outer boundary.

The stiffness matrix is assembled once per mesh; Dirichlet rows are
replaced by identity rows and the symmetric interior block is factorized
once.  Every subsequent solve is a pair of triangular back-substitutions,
which is what makes the per-timestep reconstruction loop cheap.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .mesh import TriangularMesh

MU0 = 4e-7 * math.pi

# Dunavant degree-4 rule, 6 points: (weights, barycentric coordinates)
_QW = np.array([0.223381589678011] * 3 + [0.109951743655322] * 3)
_QA = 0.445948490915965
_QB = 0.091576213509771
_QL = np.array(
    [
        [1 - 2 * _QA, _QA, _QA],
        [_QA, 1 - 2 * _QA, _QA],
        [_QA, _QA, 1 - 2 * _QA],
        [1 - 2 * _QB, _QB, _QB],
        [_QB, 1 - 2 * _QB, _QB],
        [_QB, _QB, 1 - 2 * _QB],
    ]
)


@dataclass
class StiffnessSystem:
    """Assembled and factorized discrete operator for one mesh.

    K        : raw stiffness matrix (symmetric positive semidefinite)
    K_tilde  : K with boundary rows replaced by identity rows
    """

    mesh: TriangularMesh
    K: sp.csr_matrix
    K_tilde: sp.csr_matrix
    dirichlet_nodes: np.ndarray
    interior: np.ndarray
    _K_ib: sp.csr_matrix = field(repr=False, default=None)  # type: ignore[assignment]
    _lu: object = field(repr=False, default=None)

    @property
    def n(self) -> int:
        return len(self.mesh.nodes)

    def solve(self, source: Optional[np.ndarray], h: np.ndarray) -> np.ndarray:
        """Solve K_tilde psi = source + boundary lift.

        source : nodal load vector (length n) or None for zero
        h      : Dirichlet values, one per boundary node in mesh.boundary
                 order (a scalar broadcasts)
        """
        h = np.broadcast_to(np.asarray(h, dtype=float), self.dirichlet_nodes.shape)
        if source is None:
            rhs = -(self._K_ib @ h)
        else:
            source = np.asarray(source, dtype=float)
            if source.shape != (self.n,):
                raise ValueError(
                    f"load vector has length {source.shape}, expected ({self.n},)"
                )
            rhs = source[self.interior] - self._K_ib @ h
        psi = np.empty(self.n)
        psi[self.dirichlet_nodes] = h
        psi[self.interior] = self._lu.solve(rhs)
        return psi

    def solve_columns(self, sources: np.ndarray) -> np.ndarray:
        """Solve with zero boundary data for each column of sources (n x k)."""
        rhs = np.asarray(sources, dtype=float)[self.interior]
        out = np.zeros((self.n, rhs.shape[1]))
        out[self.interior] = self._lu.solve(rhs)
        return out

    def rhs_vector(self, source: Optional[np.ndarray], h: np.ndarray) -> np.ndarray:
        """Full right-hand side of K_tilde psi = rhs (source with boundary
        entries overwritten by h); used for residual checks."""
        rhs = np.zeros(self.n) if source is None else np.array(source, dtype=float)
        rhs[self.dirichlet_nodes] = np.broadcast_to(
            np.asarray(h, dtype=float), self.dirichlet_nodes.shape
        )
        return rhs


def assemble_stiffness(mesh: TriangularMesh) -> StiffnessSystem:
    """Assemble the P1 stiffness matrix of the 1/(mu0 r) gradient form.

    The radial coefficient is evaluated at the triangle centroid (one-point
    quadrature), which keeps the matrix symmetric and the scheme second
    order for P1 elements.
    """
    tris = mesh.triangles
    areas = mesh.signed_areas()
    rc = mesh.centroids()[:, 0]
    gr, gz = mesh.grad_coeffs()
    coef = areas / (MU0 * rc)

    # local 3x3 blocks: coef * (grad_i . grad_j)
    local = coef[:, None, None] * (
        gr[:, :, None] * gr[:, None, :] + gz[:, :, None] * gz[:, None, :]
    )
    rows = np.repeat(tris, 3, axis=1).ravel()
    cols = np.tile(tris, (1, 3)).ravel()
    n = len(mesh.nodes)
    K = sp.coo_matrix((local.ravel(), (rows, cols)), shape=(n, n)).tocsr()

    dirichlet = np.asarray(mesh.boundary, dtype=np.int64)
    interior = np.setdiff1d(np.arange(n), dirichlet)

    mask = np.ones(n)
    mask[dirichlet] = 0.0
    ident = sp.coo_matrix(
        (np.ones(len(dirichlet)), (dirichlet, dirichlet)), shape=(n, n)
    )
    K_tilde = (sp.diags(mask) @ K + ident).tocsr()

    K_ii = K[interior][:, interior].tocsc()
    K_ib = K[interior][:, dirichlet].tocsr()
    try:
        lu = splu(K_ii)
    except RuntimeError as exc:  # singular interior block
        raise RuntimeError(
            f"interior stiffness block is singular (disconnected mesh?): {exc}"
        ) from exc
    return StiffnessSystem(
        mesh=mesh,
        K=K,
        K_tilde=K_tilde,
        dirichlet_nodes=dirichlet,
        interior=interior,
        _K_ib=K_ib,
        _lu=lu,
    )


# -- quadrature utilities (used by norms and oracle-style checks) ----------


def triangle_quadrature(mesh: TriangularMesh):
    """Degree-4 quadrature: points (t, 6, 2) and weights (t, 6)."""
    p = mesh.nodes[mesh.triangles]
    pts = np.einsum("qv,tvx->tqx", _QL, p)
    w = mesh.signed_areas()[:, None] * _QW[None, :]
    return pts, w


def l2_error(mesh: TriangularMesh, nodal: np.ndarray, exact) -> float:
    """L2 norm of (P1 field - exact) over the mesh, degree-4 quadrature."""
    pts, w = triangle_quadrature(mesh)
    vals = np.asarray(nodal)[mesh.triangles]
    interp = np.einsum("qv,tv->tq", _QL, vals)
    diff = interp - exact(pts[..., 0], pts[..., 1])
    return float(np.sqrt((w * diff**2).sum()))


def l2_norm(mesh: TriangularMesh, nodal: np.ndarray) -> float:
    return l2_error(mesh, nodal, lambda r, z: 0.0)
