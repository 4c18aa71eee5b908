"""Triangulated cross-section geometry: loading, validation, point location
and P1 interpolation.

The mesh is immutable after construction.  Derived quantities (triangle
gradients, the background grid used for point location, node adjacency)
are computed lazily and cached, so a mesh instance can be shared by the
whole reconstruction pipeline.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple, Optional, Sequence

import numpy as np

from .errors import MeshFormatError, MeshValidationError, OutsideMeshError


class Point2(NamedTuple):
    """Point in the poloidal plane; r is the distance to the torus axis."""

    r: float
    z: float


# Barycentric slack used when testing point membership: points this far
# (relative to the triangle scale) outside an edge still count as inside,
# so shared-edge points are found from either side.
_BARY_TOL = 1e-12


@dataclass
class TriangularMesh:
    """Fixed P1 triangulation of the vessel cross-section.

    nodes      : (n, 2) float array of (r, z) coordinates, r > 0
    triangles  : (t, 3) int array, counter-clockwise vertex indices
    boundary   : ordered node indices tracing the closed outer loop
    limiter    : optional (L, 2) closed polyline of the material contour
    """

    nodes: np.ndarray
    triangles: np.ndarray
    boundary: np.ndarray = field(default=None)  # type: ignore[assignment]
    limiter: Optional[np.ndarray] = None

    def __post_init__(self) -> None:
        self.nodes = np.asarray(self.nodes, dtype=float)
        self.triangles = np.asarray(self.triangles, dtype=np.int64)
        if self.nodes.ndim != 2 or self.nodes.shape[1] != 2:
            raise MeshValidationError("nodes must be an (n, 2) array")
        if self.triangles.ndim != 2 or self.triangles.shape[1] != 3:
            raise MeshValidationError("triangles must be a (t, 3) array")
        if self.limiter is not None:
            self.limiter = np.asarray(self.limiter, dtype=float)
        self._caches: dict = {}
        self._validate()
        if self.boundary is None:
            self.boundary = self._trace_boundary()
        else:
            self.boundary = np.asarray(self.boundary, dtype=np.int64)

    # -- validation ------------------------------------------------------

    def _validate(self) -> None:
        n = len(self.nodes)
        bad = np.nonzero(self.nodes[:, 0] <= 0.0)[0]
        if bad.size:
            raise MeshValidationError(f"node {bad[0]} has r <= 0")
        if self.triangles.min(initial=0) < 0 or self.triangles.max(initial=-1) >= n:
            t = np.nonzero((self.triangles < 0) | (self.triangles >= n))[0][0]
            raise MeshValidationError(f"triangle {t} references a missing node")
        areas = self.signed_areas()
        bad = np.nonzero(areas <= 0.0)[0]
        if bad.size:
            raise MeshValidationError(
                f"triangle {bad[0]} has non-positive area (clockwise or degenerate)"
            )
        used = np.zeros(n, dtype=bool)
        used[self.triangles.ravel()] = True
        if not used.all():
            raise MeshValidationError(f"node {np.nonzero(~used)[0][0]} is orphaned")

    def _trace_boundary(self) -> np.ndarray:
        """Reconstruct the ordered boundary loop from the triangle list.

        A boundary edge is a directed edge whose reverse never occurs;
        with CCW triangles these edges traverse the outer loop CCW.
        """
        t = self.triangles
        edges = np.concatenate([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]])
        edge_set = {(int(a), int(b)) for a, b in edges}
        succ: dict[int, int] = {}
        for a, b in edge_set:
            if (b, a) in edge_set:
                continue
            if a in succ:
                raise MeshValidationError(
                    f"non-manifold boundary at node {a} (two outgoing boundary edges)"
                )
            succ[a] = b
        if not succ:
            raise MeshValidationError("mesh has no boundary (closed surface?)")
        start = min(succ)
        loop = [start]
        cur = succ[start]
        while cur != start:
            loop.append(cur)
            if cur not in succ:
                raise MeshValidationError(f"non-manifold boundary at node {cur}")
            cur = succ[cur]
            if len(loop) > len(succ):
                raise MeshValidationError("boundary loop does not close")
        if len(loop) != len(succ):
            raise MeshValidationError(
                "boundary is not a single closed loop (multiple components)"
            )
        return np.asarray(loop, dtype=np.int64)

    # -- cached geometry --------------------------------------------------

    def _cache(self, key, builder):
        if key not in self._caches:
            self._caches[key] = builder()
        return self._caches[key]

    def signed_areas(self) -> np.ndarray:
        def build():
            p = self.nodes[self.triangles]
            d1 = p[:, 1] - p[:, 0]
            d2 = p[:, 2] - p[:, 0]
            return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])

        return self._cache("areas", build)

    def centroids(self) -> np.ndarray:
        return self._cache("centroids", lambda: self.nodes[self.triangles].mean(axis=1))

    def grad_coeffs(self) -> tuple[np.ndarray, np.ndarray]:
        """Per-triangle P1 hat-function gradients.

        Returns (gr, gz), each (t, 3): the gradient of the hat function of
        local vertex v on triangle t is (gr[t, v], gz[t, v]).
        """

        def build():
            p = self.nodes[self.triangles]
            a2 = 2.0 * self.signed_areas()
            r, z = p[..., 0], p[..., 1]
            gr = np.stack(
                [z[:, 1] - z[:, 2], z[:, 2] - z[:, 0], z[:, 0] - z[:, 1]], axis=1
            )
            gz = np.stack(
                [r[:, 2] - r[:, 1], r[:, 0] - r[:, 2], r[:, 1] - r[:, 0]], axis=1
            )
            return gr / a2[:, None], gz / a2[:, None]

        return self._cache("grads", build)

    def gradient(self, nodal: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Constant per-triangle gradient of a P1 nodal field."""
        gr, gz = self.grad_coeffs()
        vals = np.asarray(nodal)[self.triangles]
        return (gr * vals).sum(axis=1), (gz * vals).sum(axis=1)

    def median_edge_length(self) -> float:
        def build():
            p = self.nodes[self.triangles]
            e = np.concatenate(
                [p[:, 1] - p[:, 0], p[:, 2] - p[:, 1], p[:, 0] - p[:, 2]]
            )
            return float(np.median(np.hypot(e[:, 0], e[:, 1])))

        return self._cache("median_edge", build)

    def boundary_set(self) -> frozenset:
        return self._cache("bset", lambda: frozenset(int(i) for i in self.boundary))

    def boundary_arclength(self) -> np.ndarray:
        """Cumulative arclength of the boundary loop; entry i is the length
        from boundary[0] to boundary[i]; the total perimeter is appended."""

        def build():
            pts = self.nodes[self.boundary]
            seg = np.hypot(*(np.roll(pts, -1, axis=0) - pts).T)
            return np.concatenate([[0.0], np.cumsum(seg)])

        return self._cache("barclen", build)

    def node_rings(self) -> list[np.ndarray]:
        """Neighbors of each node, sorted by angle around it."""

        def build():
            n = len(self.nodes)
            nbrs: list[set] = [set() for _ in range(n)]
            for a, b, c in self.triangles:
                nbrs[a].update((b, c))
                nbrs[b].update((a, c))
                nbrs[c].update((a, b))
            rings = []
            for i, s in enumerate(nbrs):
                idx = np.fromiter(s, dtype=np.int64)
                d = self.nodes[idx] - self.nodes[i]
                idx = idx[np.argsort(np.arctan2(d[:, 1], d[:, 0]))]
                rings.append(idx)
            return rings

        return self._cache("rings", build)

    # -- point location ---------------------------------------------------

    def _grid(self):
        def build():
            lo = self.nodes.min(axis=0)
            hi = self.nodes.max(axis=0)
            span = np.maximum(hi - lo, 1e-300)
            ncell = max(1, int(np.sqrt(len(self.triangles) / 2.0)))
            cells: list[list[int]] = [[] for _ in range(ncell * ncell)]
            p = self.nodes[self.triangles]
            tlo = ((p.min(axis=1) - lo) / span * ncell).astype(int).clip(0, ncell - 1)
            thi = ((p.max(axis=1) - lo) / span * ncell).astype(int).clip(0, ncell - 1)
            for t in range(len(self.triangles)):
                for ix in range(tlo[t, 0], thi[t, 0] + 1):
                    for iy in range(tlo[t, 1], thi[t, 1] + 1):
                        cells[ix * ncell + iy].append(t)
            return lo, span, ncell, [np.asarray(c, dtype=np.int64) for c in cells]

        return self._cache("grid", build)

    def _barycentric(self, tri: int, r: float, z: float) -> np.ndarray:
        i, j, k = self.triangles[tri]
        gr, gz = self.grad_coeffs()
        # hat functions are the barycentric coordinates
        p0 = self.nodes[[i, j, k]]
        lam = np.empty(3)
        for v in range(3):
            lam[v] = 1.0 + gr[tri, v] * (r - p0[v, 0]) + gz[tri, v] * (z - p0[v, 1])
        return lam

    def locate(self, p) -> Optional[tuple[int, np.ndarray]]:
        """Find the triangle containing p.

        Returns (triangle index, barycentric weights), or None when p is
        outside the mesh.  Points on shared edges resolve to the lowest
        containing triangle index.
        """
        r, z = float(p[0]), float(p[1])
        lo, span, ncell, cells = self._grid()
        ix = int((r - lo[0]) / span[0] * ncell)
        iy = int((z - lo[1]) / span[1] * ncell)
        if ix < 0 or iy < 0 or ix >= ncell or iy >= ncell:
            return None
        for t in np.sort(cells[ix * ncell + iy]):
            lam = self._barycentric(int(t), r, z)
            if lam.min() >= -_BARY_TOL:
                return int(t), np.clip(lam, 0.0, 1.0)
        return None

    def locate_many(self, points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Vectorized locate: returns (tris, bary) with tris == -1 outside."""
        pts = np.asarray(points, dtype=float)
        tris = np.full(len(pts), -1, dtype=np.int64)
        bary = np.zeros((len(pts), 3))
        for i, p in enumerate(pts):
            hit = self.locate(p)
            if hit is not None:
                tris[i], bary[i] = hit
        return tris, bary

    def interpolate(self, nodal: np.ndarray, p) -> float:
        """P1 interpolation of a nodal field at p; exact for affine fields."""
        hit = self.locate(p)
        if hit is None:
            raise OutsideMeshError(f"point ({p[0]}, {p[1]}) is outside the mesh")
        t, lam = hit
        return float(np.asarray(nodal)[self.triangles[t]] @ lam)

    def nudge_inside(self, p, rel: float = 0.5) -> Point2:
        """Project a point lying on (or marginally outside) the boundary to a
        nearby interior point, half a cell inward by default."""
        hit = self.locate(p)
        r, z = float(p[0]), float(p[1])
        step = rel * self.median_edge_length()
        if hit is None:
            # pull toward the nearest boundary segment's inward side
            q, _ = nearest_on_polyline(self.nodes[self.boundary], (r, z), closed=True)
            r, z = q
        c = self.nodes[self.triangles].mean(axis=(0, 1))
        d = np.array([c[0] - r, c[1] - z])
        nd = np.hypot(*d)
        if nd > 0:
            d = d / nd * step
        q = Point2(r + d[0], z + d[1])
        return q if self.locate(q) is not None else Point2(r, z)


def nearest_on_polyline(
    poly: np.ndarray, p, closed: bool = False
) -> tuple[Point2, float]:
    """Closest point on a polyline to p and its arclength coordinate."""
    pts = np.asarray(poly, dtype=float)
    if closed and not np.allclose(pts[0], pts[-1]):
        pts = np.vstack([pts, pts[0]])
    a = pts[:-1]
    b = pts[1:]
    ab = b - a
    seg_len = np.hypot(ab[:, 0], ab[:, 1])
    ap = np.asarray(p, dtype=float) - a
    t = np.clip((ap * ab).sum(axis=1) / np.maximum(seg_len**2, 1e-300), 0.0, 1.0)
    proj = a + t[:, None] * ab
    d = np.hypot(proj[:, 0] - p[0], proj[:, 1] - p[1])
    i = int(np.argmin(d))
    s = float(np.concatenate([[0.0], np.cumsum(seg_len)])[i] + t[i] * seg_len[i])
    return Point2(*proj[i]), s


# -- mesh file format -----------------------------------------------------


def _tokens(path: str):
    with open(path) as f:
        for line in f:
            line = line.split("#", 1)[0]
            yield from line.split()


def load_mesh(path: str) -> TriangularMesh:
    """Load a mesh from the whitespace-separated text format.

    Layout: ``nodes <N> triangles <T>``, then N ``r z`` lines, then T
    ``i j k`` lines (0-based, CCW), then an optional ``limiter <L>``
    section of L ``r z`` points.  ``#`` starts a comment.
    """
    tok = _tokens(path)

    def need(what: str) -> str:
        try:
            return next(tok)
        except StopIteration:
            raise MeshFormatError(f"unexpected end of file while reading {what}")

    def keyword(expect: str) -> None:
        got = need(expect)
        if got != expect:
            raise MeshFormatError(f"expected '{expect}', got '{got}'")

    def integer(what: str) -> int:
        s = need(what)
        try:
            return int(s)
        except ValueError:
            raise MeshFormatError(f"expected integer {what}, got '{s}'")

    def number(what: str) -> float:
        s = need(what)
        try:
            return float(s)
        except ValueError:
            raise MeshFormatError(f"expected number {what}, got '{s}'")

    keyword("nodes")
    n = integer("node count")
    keyword("triangles")
    t = integer("triangle count")
    nodes = np.array(
        [[number(f"node {i} r"), number(f"node {i} z")] for i in range(n)]
    ).reshape(n, 2)
    tris = np.array(
        [[integer(f"triangle {i} vertex") for _ in range(3)] for i in range(t)]
    ).reshape(t, 3)
    limiter = None
    extra = next(tok, None)
    if extra is not None:
        if extra != "limiter":
            raise MeshFormatError(f"unexpected trailing token '{extra}'")
        nl = integer("limiter count")
        limiter = np.array(
            [[number("limiter r"), number("limiter z")] for _ in range(nl)]
        ).reshape(nl, 2)
        extra = next(tok, None)
        if extra is not None:
            raise MeshFormatError(f"unexpected trailing token '{extra}'")
    return TriangularMesh(nodes=nodes, triangles=tris, limiter=limiter)


def write_mesh(mesh: TriangularMesh, path: str) -> None:
    with open(path, "w") as f:
        f.write(f"nodes {len(mesh.nodes)} triangles {len(mesh.triangles)}\n")
        for r, z in mesh.nodes:
            f.write(f"{r:.17g} {z:.17g}\n")
        for i, j, k in mesh.triangles:
            f.write(f"{i} {j} {k}\n")
        if mesh.limiter is not None:
            f.write(f"limiter {len(mesh.limiter)}\n")
            for r, z in mesh.limiter:
                f.write(f"{r:.17g} {z:.17g}\n")
