"""Flux-map topology: magnetic axis, plasma boundary flux, normalized flux
and the per-triangle plasma mask.

The plasma boundary flux is either the maximum of the flux along the
limiter contour or the flux at a saddle point (X-point), whichever gives
the smaller plasma.  Cut triangles get a fractional mask from the exact
area of the sub-polygon where the P1 interpolant is above the boundary
flux, so the free-boundary fixed-point map stays continuous as the
boundary sweeps through the mesh.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .errors import DegeneratePlasmaError
from .mesh import Point2, TriangularMesh

BoundaryKind = str  # 'limiter' | 'xpoint'


@dataclass
class PlasmaState:
    """Topology analysis of one flux map."""

    psi_axis: float
    axis: Point2
    psi_b: float
    boundary_kind: BoundaryKind
    xpoint: Optional[Point2]
    psi_bar: np.ndarray  # nodal normalized flux
    mask: np.ndarray  # per-triangle plasma area fraction in [0, 1]

    @property
    def span(self) -> float:
        return self.psi_axis - self.psi_b


def _patch_quadratic(mesh: TriangularMesh, node: int) -> Optional[tuple]:
    """Least-squares quadratic fit of psi over a node's neighborhood.

    Returns (points index array, shift) for the fit stencil; grown to the
    second ring when the first ring is too small for the 6 coefficients.
    """
    rings = mesh.node_rings()
    idx = [node] + list(rings[node])
    if len(idx) < 6:
        second = set()
        for j in rings[node]:
            second.update(rings[j])
        idx = sorted(set(idx) | second)
    if len(idx) < 6:
        return None
    return np.asarray(idx, dtype=np.int64)


def _fit_quadratic(mesh: TriangularMesh, psi: np.ndarray, node: int):
    """Fit psi ~ c0 + c1 x + c2 y + c3 x^2 + c4 xy + c5 y^2 around node.

    Coordinates are shifted to the node for conditioning.  Returns the
    coefficient vector and the stencil radius, or None.
    """
    idx = _patch_quadratic(mesh, node)
    if idx is None:
        return None
    p = mesh.nodes[idx] - mesh.nodes[node]
    x, y = p[:, 0], p[:, 1]
    A = np.column_stack([np.ones_like(x), x, y, x * x, x * y, y * y])
    coef, *_ = np.linalg.lstsq(A, np.asarray(psi)[idx], rcond=None)
    radius = float(np.hypot(x, y).max())
    return coef, radius


def _critical_point(coef: np.ndarray) -> Optional[tuple[float, float, float, np.ndarray]]:
    """Critical point of the fitted quadratic in shifted coordinates.

    Returns (dx, dy, value, hessian) or None when the quadratic part is
    singular.
    """
    H = np.array([[2 * coef[3], coef[4]], [coef[4], 2 * coef[5]]])
    det = H[0, 0] * H[1, 1] - H[0, 1] * H[1, 0]
    if abs(det) < 1e-300:
        return None
    d = np.linalg.solve(H, -np.array([coef[1], coef[2]]))
    val = (
        coef[0]
        + coef[1] * d[0]
        + coef[2] * d[1]
        + coef[3] * d[0] ** 2
        + coef[4] * d[0] * d[1]
        + coef[5] * d[1] ** 2
    )
    return float(d[0]), float(d[1]), float(val), H


def find_axis(mesh: TriangularMesh, psi: np.ndarray) -> tuple[Point2, float]:
    """Locate the magnetic axis: the interior maximum of the flux map.

    The maximizing node is refined by a quadratic fit over its patch when
    the fit has a proper interior maximum there; the axis flux never drops
    below the nodal maximum.
    """
    psi = np.asarray(psi, dtype=float)
    imax = int(np.argmax(psi))
    scale = float(np.max(np.abs(psi))) or 1.0
    if psi[imax] - psi.min() <= 1e-14 * scale:
        raise DegeneratePlasmaError("flux map is constant: no magnetic axis")
    if imax in mesh.boundary_set():
        raise DegeneratePlasmaError(
            "flux maximum attained on the vessel boundary: no interior plasma"
        )
    axis = Point2(*mesh.nodes[imax])
    psi_axis = float(psi[imax])
    fit = _fit_quadratic(mesh, psi, imax)
    if fit is not None:
        coef, radius = fit
        crit = _critical_point(coef)
        if crit is not None:
            dx, dy, val, H = crit
            neg_definite = H[0, 0] < 0 and (H[0, 0] * H[1, 1] - H[0, 1] ** 2) > 0
            if neg_definite and np.hypot(dx, dy) <= radius:
                axis = Point2(axis.r + dx, axis.z + dy)
                psi_axis = max(psi_axis, val)
    return axis, psi_axis


# -- X-point search ---------------------------------------------------------


def default_xpoint_zones(mesh: TriangularMesh) -> list[tuple[float, float, float, float]]:
    """Lower and upper thirds of the bounding box, full radial extent."""
    rlo, zlo = mesh.nodes.min(axis=0)
    rhi, zhi = mesh.nodes.max(axis=0)
    third = (zhi - zlo) / 3.0
    return [(rlo, rhi, zlo, zlo + third), (rlo, rhi, zhi - third, zhi)]


def _ring_sign_changes(psi: np.ndarray, node: int, ring: np.ndarray) -> int:
    d = psi[ring] - psi[node]
    signs = np.sign(d[np.abs(d) > 0])
    if len(signs) < 2:
        return 0
    flips = np.count_nonzero(signs != np.roll(signs, 1))
    return int(flips)


def find_saddles(
    mesh: TriangularMesh,
    psi: np.ndarray,
    zones: Optional[Sequence[tuple[float, float, float, float]]] = None,
) -> list[tuple[Point2, float]]:
    """Saddle points of the P1 flux map inside the given rectangles.

    Candidate nodes are those whose neighbor ring alternates in sign at
    least four times; each candidate is refined by a quadratic patch fit
    and kept when the fitted Hessian is indefinite.
    """
    psi = np.asarray(psi, dtype=float)
    if zones is None:
        zones = default_xpoint_zones(mesh)
    rings = mesh.node_rings()
    bset = mesh.boundary_set()
    in_zone = np.zeros(len(mesh.nodes), dtype=bool)
    for rlo, rhi, zlo, zhi in zones:
        in_zone |= (
            (mesh.nodes[:, 0] >= rlo)
            & (mesh.nodes[:, 0] <= rhi)
            & (mesh.nodes[:, 1] >= zlo)
            & (mesh.nodes[:, 1] <= zhi)
        )
    found: list[tuple[Point2, float]] = []
    for node in np.nonzero(in_zone)[0]:
        if int(node) in bset:
            continue
        if _ring_sign_changes(psi, int(node), rings[node]) < 4:
            continue
        fit = _fit_quadratic(mesh, psi, int(node))
        if fit is None:
            continue
        coef, radius = fit
        crit = _critical_point(coef)
        if crit is None:
            continue
        dx, dy, val, H = crit
        if H[0, 0] * H[1, 1] - H[0, 1] ** 2 >= 0:
            continue  # not a saddle
        if np.hypot(dx, dy) <= radius:
            p = Point2(mesh.nodes[node][0] + dx, mesh.nodes[node][1] + dy)
            found.append((p, float(val)))
        else:
            found.append((Point2(*mesh.nodes[node]), float(psi[node])))
    return found


def _limiter_samples(mesh: TriangularMesh, limiter: np.ndarray):
    """Dense sample points along the limiter, located once and cached."""
    key = ("limiter_samples", limiter.tobytes())
    if key not in mesh._caches:
        pts = np.asarray(limiter, dtype=float)
        closed = np.vstack([pts, pts[:1]])
        seg = np.diff(closed, axis=0)
        seglen = np.hypot(seg[:, 0], seg[:, 1])
        step = 0.5 * mesh.median_edge_length()
        samples = []
        for a, d, L in zip(closed[:-1], seg, seglen):
            k = max(1, int(np.ceil(L / step)))
            t = np.arange(k) / k
            samples.append(a + t[:, None] * d)
        samples = np.vstack(samples)
        tris, bary = mesh.locate_many(samples)
        keep = tris >= 0
        mesh._caches[key] = (mesh.triangles[tris[keep]], bary[keep])
    return mesh._caches[key]


def find_boundary_flux(
    mesh: TriangularMesh,
    psi: np.ndarray,
    limiter: Optional[np.ndarray] = None,
    xpoint_search: bool = True,
    psi_axis: Optional[float] = None,
    xpoint_zones: Optional[Sequence[tuple[float, float, float, float]]] = None,
) -> tuple[float, BoundaryKind, Optional[Point2]]:
    """Boundary flux psi_b, its kind, and the X-point location if used.

    The limiter candidate is the maximum of the interpolated flux along
    the limiter contour; the X-point candidate is the highest saddle flux.
    The larger candidate wins: the plasma boundary is the innermost of the
    two constraints.
    """
    psi = np.asarray(psi, dtype=float)
    candidates: list[tuple[float, BoundaryKind, Optional[Point2]]] = []
    if limiter is not None:
        tri_nodes, bary = _limiter_samples(mesh, limiter)
        vals = (psi[tri_nodes] * bary).sum(axis=1)
        if len(vals):
            candidates.append((float(vals.max()), "limiter", None))
    if xpoint_search:
        best = None
        for p, val in find_saddles(mesh, psi, xpoint_zones):
            if psi_axis is not None and val >= psi_axis:
                continue
            if best is None or val > best[0]:
                best = (val, p)
        if best is not None:
            candidates.append((best[0], "xpoint", best[1]))
    if not candidates:
        raise DegeneratePlasmaError(
            "no plasma boundary: no limiter given and no X-point found"
        )
    psi_b, kind, xp = max(candidates, key=lambda c: c[0])
    return psi_b, kind, xp


# -- normalization and mask --------------------------------------------------


def triangle_fractions(d: np.ndarray) -> np.ndarray:
    """Area fraction of each triangle where the P1 interpolant is >= 0.

    d is (t, 3) vertex values.  The cut of a linear function is a line, so
    the fraction is an exact rational expression of the vertex values.
    """
    d = np.asarray(d, dtype=float)
    pos = d > 0
    npos = pos.sum(axis=1)
    nneg = (d < 0).sum(axis=1)
    frac = np.zeros(len(d))
    frac[nneg == 0] = 1.0
    frac[npos == 0] = 0.0

    one = (npos == 1) & (nneg > 0)
    if one.any():
        rows = np.nonzero(one)[0]
        m = np.argmax(d[rows], axis=1)
        dm = d[rows, m]
        oth = np.stack([d[rows, (m + 1) % 3], d[rows, (m + 2) % 3]], axis=1)
        frac[rows] = (dm / (dm - oth[:, 0])) * (dm / (dm - oth[:, 1]))

    two = (npos == 2) & (nneg > 0)
    if two.any():
        rows = np.nonzero(two)[0]
        k = np.argmin(d[rows], axis=1)
        dk = d[rows, k]
        oth = np.stack([d[rows, (k + 1) % 3], d[rows, (k + 2) % 3]], axis=1)
        frac[rows] = 1.0 - (dk / (dk - oth[:, 0])) * (dk / (dk - oth[:, 1]))
    return frac


def cut_polygon(p: np.ndarray, d: np.ndarray) -> Optional[np.ndarray]:
    """Sub-polygon of triangle p (3x2) where the interpolant of d is >= 0.

    Returns the polygon vertices (3 or 4 points) or None when the whole
    triangle is on one side.
    """
    pos = d > 0
    if pos.all() or (d >= 0).all():
        return None
    if not pos.any():
        return None
    verts = []
    for i in range(3):
        j = (i + 1) % 3
        if d[i] >= 0:
            verts.append(p[i])
        if (d[i] > 0 and d[j] < 0) or (d[i] < 0 and d[j] > 0):
            t = d[i] / (d[i] - d[j])
            verts.append(p[i] + t * (p[j] - p[i]))
    if len(verts) < 3:
        return None
    return np.asarray(verts)


def normalize(
    mesh: TriangularMesh, psi: np.ndarray, psi_axis: float, psi_b: float
) -> tuple[np.ndarray, np.ndarray]:
    """Nodal normalized flux and per-triangle plasma area fractions.

    The normalized flux maps the axis to 0 and the plasma boundary to 1;
    the mask fraction is the exact cut area where psi >= psi_b.
    """
    if not psi_axis > psi_b:
        raise DegeneratePlasmaError(
            f"axis flux {psi_axis} does not exceed boundary flux {psi_b}"
        )
    psi = np.asarray(psi, dtype=float)
    psi_bar = (psi - psi_axis) / (psi_b - psi_axis)
    mask = triangle_fractions(psi[mesh.triangles] - psi_b)
    return psi_bar, mask


def analyze(
    mesh: TriangularMesh,
    psi: np.ndarray,
    limiter: Optional[np.ndarray] = None,
    xpoint_search: bool = True,
    xpoint_zones: Optional[Sequence[tuple[float, float, float, float]]] = None,
) -> PlasmaState:
    """Full topology analysis of a flux map (axis, boundary, mask)."""
    if limiter is None:
        limiter = mesh.limiter
    axis, psi_axis = find_axis(mesh, psi)
    psi_b, kind, xp = find_boundary_flux(
        mesh,
        psi,
        limiter=limiter,
        xpoint_search=xpoint_search,
        psi_axis=psi_axis,
        xpoint_zones=xpoint_zones,
    )
    psi_bar, mask = normalize(mesh, psi, psi_axis, psi_b)
    return PlasmaState(
        psi_axis=psi_axis,
        axis=axis,
        psi_b=psi_b,
        boundary_kind=kind,
        xpoint=xp,
        psi_bar=psi_bar,
        mask=mask,
    )
