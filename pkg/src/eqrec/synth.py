"""Synthetic cases: structured demo meshes and twin-experiment generation.

The twin experiment forward-solves a known set of profile coefficients,
evaluates every measurement model at the converged state, optionally adds
seeded Gaussian noise, and packages the result as a measurement set plus a
sealed truth record.  It is the quantitative validation path for the whole
pipeline.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .fem import StiffnessSystem, assemble_stiffness
from .flux import PlasmaState
from .forward import ForwardResult, plasma_current, solve_forward
from .mesh import Point2, TriangularMesh
from .observations import (
    Chord,
    FamilyWeights,
    FluxLoop,
    MeasurementSet,
    MsePoint,
    Probe,
    PressureSample,
    chord_integrals,
    mse_angle,
    poloidal_field,
    pressure_samples,
    probe_response,
)
from .profiles import ReducedBasis, ProfileCoefficients
from .fields import toroidal_field


def rectangle_mesh(
    r0: float,
    r1: float,
    z0: float,
    z1: float,
    nr: int,
    nz: int,
    limiter: Optional[np.ndarray] = None,
    symmetric: bool = False,
) -> TriangularMesh:
    """Structured triangulation of [r0,r1] x [z0,z1] with nr x nz nodes.

    Each grid cell is split along one diagonal; triangles are CCW.  With
    symmetric=True the diagonals mirror across the vertical midline of the
    rectangle, so the triangulation (and hence every discrete operator) is
    up-down symmetric; that keeps symmetric free-boundary iterations from
    exciting the weakly damped vertical mode.
    """
    r = np.linspace(r0, r1, nr)
    z = np.linspace(z0, z1, nz)
    rr, zz = np.meshgrid(r, z, indexing="ij")
    nodes = np.column_stack([rr.ravel(), zz.ravel()])
    zmid = 0.5 * (z0 + z1)

    def nid(i, j):
        return i * nz + j

    tris = []
    for i in range(nr - 1):
        for j in range(nz - 1):
            a, b = nid(i, j), nid(i + 1, j)
            c, d = nid(i + 1, j + 1), nid(i, j + 1)
            if symmetric and 0.5 * (z[j] + z[j + 1]) < zmid:
                tris.append((a, b, d))
                tris.append((b, c, d))
            else:
                tris.append((a, b, c))
                tris.append((a, c, d))
    return TriangularMesh(nodes=nodes, triangles=np.asarray(tris), limiter=limiter)


def circle_polyline(rc: float, zc: float, radius: float, n: int = 128) -> np.ndarray:
    th = np.linspace(0.0, 2.0 * np.pi, n, endpoint=False)
    return np.column_stack([rc + radius * np.cos(th), zc + radius * np.sin(th)])


# -- twin experiment -------------------------------------------------------


@dataclass
class TwinLayout:
    """Diagnostic geometry for a synthetic shot.

    Counts select equally spaced flux loops/probes on the vessel boundary;
    chords are vertical lines at the given radii; pressure samples and MSE
    points sit on the midplane z = 0.
    """

    n_loops: int = 16
    n_probes: int = 32
    chord_radii: Sequence[float] = (1.6, 1.8, 2.0, 2.2, 2.4)
    pressure_radii: Sequence[float] = tuple(np.linspace(1.55, 2.45, 10))
    mse_radii: Sequence[float] = (1.7, 1.9, 2.1, 2.3)
    mse_coeffs: Sequence[float] = (0.0, 1.0, 0.0, 0.0, 0.0, 1.0)


def _boundary_points(mesh: TriangularMesh, count: int) -> list[tuple[Point2, Point2]]:
    """count points at equal arclength on the boundary with unit tangents."""
    arc = mesh.boundary_arclength()
    perim = arc[-1]
    pts = mesh.nodes[mesh.boundary]
    out = []
    for s in np.linspace(0.0, perim, count, endpoint=False):
        k = int(np.searchsorted(arc, s, side="right") - 1)
        k = min(k, len(pts) - 1)
        a = pts[k]
        b = pts[(k + 1) % len(pts)]
        seg = arc[k + 1] - arc[k]
        t = (s - arc[k]) / seg if seg > 0 else 0.0
        p = a + t * (b - a)
        tan = (b - a) / max(np.hypot(*(b - a)), 1e-300)
        out.append((Point2(*p), Point2(*tan)))
    return out


@dataclass
class TwinTruth:
    """Sealed ground truth for later comparison against a reconstruction."""

    u: ProfileCoefficients
    psi: np.ndarray
    state: PlasmaState
    total_current: float
    f0: float


def synthesize_measurements(
    mesh: TriangularMesh,
    basis: ReducedBasis,
    u_true: ProfileCoefficients,
    f0: float,
    boundary_value: float = 0.0,
    layout: Optional[TwinLayout] = None,
    noise: Optional[dict] = None,
    seed: int = 0,
    system: Optional[StiffnessSystem] = None,
    reg: tuple[float, float, float] = (1e-3, 1e-3, 1e-3),
    forward_tol: float = 1e-10,
    forward_max_iter: int = 60,
    auto_weights: bool = True,
) -> tuple[MeasurementSet, TwinTruth, ForwardResult]:
    """Forward-solve u_true and evaluate every measurement model.

    noise maps family name ('probes', 'polarimetry', 'interferometry',
    'pressure', 'mse', 'loops') to a relative sigma; the additive Gaussian
    perturbation is sigma times the family RMS value.  With auto_weights
    the family weights are set to 1/mean(value^2) so all residual families
    enter the cost at comparable magnitude.
    """
    layout = layout or TwinLayout()
    if system is None:
        system = assemble_stiffness(mesh)
    h = np.full(len(mesh.boundary), float(boundary_value))
    fwd = solve_forward(
        system, basis, u_true, h, tol=forward_tol, max_iter=forward_max_iter
    )
    if not fwd.converged or fwd.state is None:
        raise RuntimeError("forward solve for the twin experiment did not converge")
    psi, state = fwd.psi, fwd.state

    rng = np.random.default_rng(seed)
    noise = noise or {}

    def noisy(values: np.ndarray, fam: str) -> np.ndarray:
        sig = float(noise.get(fam, 0.0))
        if sig <= 0.0:
            return values
        scale = float(np.sqrt(np.mean(np.square(values)))) or 1.0
        return values + sig * scale * rng.standard_normal(len(values))

    loops_geom = _boundary_points(mesh, layout.n_loops)
    loop_vals = noisy(
        np.array([mesh.interpolate(psi, p) for p, _ in loops_geom]), "loops"
    )
    flux_loops = [
        FluxLoop(p.r, p.z, v) for (p, _), v in zip(loops_geom, loop_vals)
    ]

    probes_geom = _boundary_points(mesh, layout.n_probes)
    probes_plain = [Probe(p.r, p.z, (t.r, t.z), 0.0) for p, t in probes_geom]
    probe_vals = noisy(
        np.array([probe_response(mesh, psi, pb) for pb in probes_plain]), "probes"
    )
    probe_weight = _auto_weight(probe_vals) if auto_weights else 1.0
    probes = [
        Probe(pb.r, pb.z, pb.tangent, v, probe_weight)
        for pb, v in zip(probes_plain, probe_vals)
    ]

    zlo = mesh.nodes[:, 1].min()
    zhi = mesh.nodes[:, 1].max()
    chords_plain = [
        Chord(rc, zlo, rc, zhi, 0.0, 0.0) for rc in layout.chord_radii
    ]
    pol = np.empty(len(chords_plain))
    itf = np.empty(len(chords_plain))
    for i, ch in enumerate(chords_plain):
        pol[i], itf[i] = chord_integrals(
            mesh, state.psi_bar, psi, basis, u_true.c, ch
        )
    pol = noisy(pol, "polarimetry")
    itf = noisy(itf, "interferometry")
    chords = [
        Chord(ch.r0, ch.z0, ch.r1, ch.z1, a, b)
        for ch, a, b in zip(chords_plain, pol, itf)
    ]

    pr = np.asarray(layout.pressure_radii, dtype=float)
    pvals = noisy(
        pressure_samples(basis, u_true.a, state, mesh, pr), "pressure"
    )
    pressure = [PressureSample(r, v) for r, v in zip(pr, pvals)]

    mse_points = []
    mse_vals = np.empty(len(layout.mse_radii))
    for i, rm in enumerate(layout.mse_radii):
        br, bz = poloidal_field(mesh, psi, (rm, 0.0))
        pb = mesh.interpolate(state.psi_bar, (rm, 0.0))
        bphi = toroidal_field(basis, u_true.b, f0, state, pb, rm)
        mse_vals[i] = mse_angle(br, bz, bphi, layout.mse_coeffs)
    mse_vals = noisy(mse_vals, "mse")
    for rm, v in zip(layout.mse_radii, mse_vals):
        mse_points.append(MsePoint(rm, 0.0, tuple(layout.mse_coeffs), v))

    weights = FamilyWeights()
    if auto_weights:
        weights = FamilyWeights(
            polarimetry=_auto_weight(pol),
            interferometry=_auto_weight(itf),
            pressure=_auto_weight(pvals),
            mse=_auto_weight(mse_vals),
        )

    meas = MeasurementSet(
        flux_loops=flux_loops,
        probes=probes,
        chords=chords,
        pressure=pressure,
        mse=mse_points,
        weights=weights,
        reg=tuple(reg),
        f0=f0,
    )
    truth = TwinTruth(
        u=u_true,
        psi=psi,
        state=state,
        total_current=plasma_current(fwd.current_matrix, u_true.stacked()),
        f0=f0,
    )
    return meas, truth, fwd


def _auto_weight(values: np.ndarray) -> float:
    ms = float(np.mean(np.square(values)))
    return 1.0 / ms if ms > 0 else 1.0
