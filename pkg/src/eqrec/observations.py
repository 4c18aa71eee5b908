"""Measurement models and their linearization around the current flux
iterate.

Families: flux loops (Dirichlet data), magnetic probes, polarimetry and
interferometry chords, midplane pressure samples, MSE pitch angles.  The
linearization freezes exactly what makes each residual affine in the
stacked profile coefficients: the flux map inside the chord field factor,
the normalized flux seen by the pressure operator, and the toroidal field
inside the cross-multiplied MSE residual.  At convergence of the outer
loop the frozen models agree with the exact ones.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field as dc_field
from typing import Optional, Sequence

import numpy as np

from .errors import OutsideMeshError
from .fem import StiffnessSystem
from .flux import PlasmaState
from .forward import PlasmaCurrentMatrix
from .mesh import Point2, TriangularMesh, nearest_on_polyline
from .profiles import ProfileCoefficients, ReducedBasis, f_profile, pressure_profile


def _rot_cw(v: tuple[float, float]) -> tuple[float, float]:
    """Rotate a direction clockwise by 90 degrees: tangent -> outward normal."""
    return (v[1], -v[0])


# -- measurement containers -------------------------------------------------


@dataclass(frozen=True)
class FluxLoop:
    r: float
    z: float
    value: float  # Wb


@dataclass(frozen=True)
class Probe:
    r: float
    z: float
    tangent: tuple[float, float]  # unit vector along the vessel wall
    value: float  # T
    weight: float = 1.0


@dataclass(frozen=True)
class Chord:
    r0: float
    z0: float
    r1: float
    z1: float
    polarimetry: Optional[float] = None
    interferometry: Optional[float] = None
    weight: float = 1.0

    def endpoints(self) -> tuple[np.ndarray, np.ndarray]:
        return np.array([self.r0, self.z0]), np.array([self.r1, self.z1])


@dataclass(frozen=True)
class PressureSample:
    r: float
    value: float  # Pa
    weight: float = 1.0


@dataclass(frozen=True)
class MsePoint:
    r: float
    z: float
    coeffs: tuple[float, float, float, float, float, float]
    value: float  # rad
    weight: float = 1.0


@dataclass(frozen=True)
class FamilyWeights:
    """K1..K4 of the cost function; probe misfit is unweighted."""

    polarimetry: float = 1.0
    interferometry: float = 1.0
    pressure: float = 1.0
    mse: float = 1.0


@dataclass
class MeasurementSet:
    flux_loops: list[FluxLoop] = dc_field(default_factory=list)
    probes: list[Probe] = dc_field(default_factory=list)
    chords: list[Chord] = dc_field(default_factory=list)
    pressure: list[PressureSample] = dc_field(default_factory=list)
    mse: list[MsePoint] = dc_field(default_factory=list)
    weights: FamilyWeights = dc_field(default_factory=FamilyWeights)
    reg: tuple[float, float, float] = (1e-3, 1e-3, 1e-3)
    f0: float = 1.0

    def __post_init__(self) -> None:
        if min(
            self.weights.polarimetry,
            self.weights.interferometry,
            self.weights.pressure,
            self.weights.mse,
        ) < 0:
            raise ValueError("family weights must be >= 0")
        norm = []
        for p in self.probes:
            t = math.hypot(*p.tangent)
            if t == 0:
                raise ValueError(f"probe at ({p.r}, {p.z}) has a zero tangent")
            norm.append(
                Probe(p.r, p.z, (p.tangent[0] / t, p.tangent[1] / t), p.value, p.weight)
            )
        self.probes = norm
        for c in self.chords:
            if c.r0 == c.r1 and c.z0 == c.z1:
                raise ValueError("chord endpoints coincide")


# -- individual measurement models -------------------------------------------


def boundary_condition(mesh: TriangularMesh, loops: Sequence[FluxLoop]) -> np.ndarray:
    """Dirichlet data on every boundary node by periodic linear
    interpolation of the loop values in boundary arclength."""
    if len(loops) < 2:
        raise ValueError("at least two flux loops are needed for boundary data")
    arc = mesh.boundary_arclength()
    perim = float(arc[-1])
    bpoly = mesh.nodes[mesh.boundary]
    tol = 2.0 * mesh.median_edge_length()
    s_vals = []
    for lp in loops:
        q, s = nearest_on_polyline(bpoly, (lp.r, lp.z), closed=True)
        if math.hypot(q.r - lp.r, q.z - lp.z) > tol:
            raise ValueError(
                f"flux loop at ({lp.r}, {lp.z}) is not on the vessel boundary"
            )
        s_vals.append((s % perim, lp.value))
    s_vals.sort()
    sp = np.array([s for s, _ in s_vals])
    vp = np.array([v for _, v in s_vals])
    return np.interp(arc[:-1], sp, vp, period=perim)


def poloidal_field(
    mesh: TriangularMesh, psi: np.ndarray, p
) -> tuple[float, float]:
    """(B_r, B_z) from the per-triangle gradient of the flux map."""
    hit = mesh.locate(p)
    if hit is None:
        raise OutsideMeshError(f"point ({p[0]}, {p[1]}) is outside the mesh")
    t, _ = hit
    gr, gz = mesh.grad_coeffs()
    vals = np.asarray(psi)[mesh.triangles[t]]
    dpsi_dr = float(gr[t] @ vals)
    dpsi_dz = float(gz[t] @ vals)
    r = float(p[0])
    return -dpsi_dz / r, dpsi_dr / r


def probe_response(mesh: TriangularMesh, psi: np.ndarray, probe: Probe) -> float:
    """Tangential poloidal field at the probe: (1/r) dpsi/dn with n the
    outward normal of the stored tangent direction."""
    p = (probe.r, probe.z)
    if mesh.locate(p) is None:
        p = mesh.nudge_inside(p)
    br, bz = poloidal_field(mesh, psi, p)
    return br * probe.tangent[0] + bz * probe.tangent[1]


def chord_quadrature(mesh: TriangularMesh, chord: Chord):
    """Composite midpoint rule along the chord, step half the median edge.

    Returns (tris, bary, points, dl, normal); points outside the mesh are
    dropped.  Raises when the whole chord misses the domain.
    """
    a, b = chord.endpoints()
    length = float(np.hypot(*(b - a)))
    step = 0.5 * mesh.median_edge_length()
    k = max(1, int(math.ceil(length / step)))
    t = (np.arange(k) + 0.5) / k
    pts = a + t[:, None] * (b - a)
    tris, bary = mesh.locate_many(pts)
    keep = tris >= 0
    if not keep.any():
        raise OutsideMeshError("chord lies entirely outside the mesh")
    direction = (b - a) / length
    return (
        tris[keep],
        bary[keep],
        pts[keep],
        np.full(keep.sum(), length / k),
        np.asarray(_rot_cw(tuple(direction))),
    )


def chord_integrals(
    mesh: TriangularMesh,
    psi_bar: np.ndarray,
    psi: np.ndarray,
    basis: ReducedBasis,
    c: Sequence[float],
    chord: Chord,
) -> tuple[float, float]:
    """(polarimetry, interferometry) line integrals along one chord.

    The density vanishes outside the plasma (normalized flux above one),
    so both integrals only collect contributions from the plasma segment.
    """
    tris, bary, pts, dl, nrm = chord_quadrature(mesh, chord)
    gr, gz = mesh.gradient(psi)
    pb = (np.asarray(psi_bar)[mesh.triangles[tris]] * bary).sum(axis=1)
    inside = pb <= 1.0
    if not inside.any():
        return 0.0, 0.0
    ne = basis.design(np.clip(pb[inside], 0.0, 1.0)) @ np.asarray(c, dtype=float)
    dpsi_dn = gr[tris[inside]] * nrm[0] + gz[tris[inside]] * nrm[1]
    r = pts[inside, 0]
    w = dl[inside]
    pol = float((ne / r * dpsi_dn * w).sum())
    itf = float((ne * w).sum())
    return pol, itf


def mse_angle(
    b_r: float, b_z: float, b_phi: float, a: Sequence[float]
) -> float:
    """Pitch angle from the six-coefficient MSE line combination, reduced
    to (-pi/2, pi/2]."""
    num = a[0] * b_r + a[1] * b_z + a[2] * b_phi
    den = a[3] * b_r + a[4] * b_z + a[5] * b_phi
    scale = max(abs(num), abs(den), 1e-300)
    if abs(den) <= 1e-14 * scale:
        raise ValueError("MSE denominator vanishes at this point")
    return math.atan(num / den)


def pressure_samples(
    basis: ReducedBasis,
    a: Sequence[float],
    state: PlasmaState,
    mesh: TriangularMesh,
    radii: Sequence[float],
) -> np.ndarray:
    """Model pressure on the midplane at the given radii; zero outside the
    plasma."""
    p = pressure_profile(basis, a, state.psi_axis, state.psi_b)
    out = np.zeros(len(radii))
    for i, r in enumerate(radii):
        hit = mesh.locate((r, 0.0))
        if hit is None:
            raise OutsideMeshError(f"pressure sample at r={r} is outside the mesh")
        t, lam = hit
        pb = float(state.psi_bar[mesh.triangles[t]] @ lam)
        if pb <= 1.0:
            out[i] = p(min(max(pb, 0.0), 1.0))
    return out


def trapezoid_weights(radii: np.ndarray) -> np.ndarray:
    """Composite trapezoid weights absorbing the dr measure of the
    continuous pressure misfit integral."""
    if len(radii) == 1:
        return np.ones(1)
    order = np.argsort(radii)
    r = radii[order]
    w = np.empty_like(r)
    w[0] = 0.5 * (r[1] - r[0])
    w[-1] = 0.5 * (r[-1] - r[-2])
    if len(r) > 2:
        w[1:-1] = 0.5 * (r[2:] - r[:-2])
    out = np.empty_like(w)
    out[order] = w
    return out


# -- geometry cache -----------------------------------------------------------


class ObservationGeometry:
    """Located diagnostic geometry for one (mesh, measurement set) pair.

    Everything that does not depend on the flux iterate is computed once:
    probe and MSE extraction functionals, chord quadrature points, pressure
    sample locations, and the interpolated boundary data.
    """

    def __init__(
        self,
        mesh: TriangularMesh,
        meas: MeasurementSet,
        system: Optional[StiffnessSystem] = None,
    ):
        self.mesh = mesh
        self.meas = meas
        self.h = boundary_condition(mesh, meas.flux_loops) if meas.flux_loops else None
        gr, gz = mesh.grad_coeffs()

        # probes: response = row . psi
        self.probe_rows_idx = np.zeros((len(meas.probes), 3), dtype=np.int64)
        self.probe_rows_val = np.zeros((len(meas.probes), 3))
        for i, pb in enumerate(meas.probes):
            p = (pb.r, pb.z)
            if mesh.locate(p) is None:
                p = mesh.nudge_inside(p)
            hit = mesh.locate(p)
            if hit is None:
                raise OutsideMeshError(
                    f"probe at ({pb.r}, {pb.z}) cannot be attached to the mesh"
                )
            t, _ = hit
            n = _rot_cw(pb.tangent)
            self.probe_rows_idx[i] = mesh.triangles[t]
            self.probe_rows_val[i] = (n[0] * gr[t] + n[1] * gz[t]) / pb.r

        # chords: fixed quadrature geometry
        self.chord_quads = [chord_quadrature(mesh, ch) for ch in meas.chords]

        # pressure samples
        self.pressure_tris = np.zeros(len(meas.pressure), dtype=np.int64)
        self.pressure_bary = np.zeros((len(meas.pressure), 3))
        for i, ps in enumerate(meas.pressure):
            hit = mesh.locate((ps.r, 0.0))
            if hit is None:
                raise OutsideMeshError(
                    f"pressure sample at r={ps.r} is outside the mesh"
                )
            self.pressure_tris[i], self.pressure_bary[i] = hit
        self.pressure_quadw = trapezoid_weights(
            np.array([ps.r for ps in meas.pressure])
        )

        # MSE points: B_r, B_z extraction rows
        self.mse_rows_idx = np.zeros((len(meas.mse), 3), dtype=np.int64)
        self.mse_br_val = np.zeros((len(meas.mse), 3))
        self.mse_bz_val = np.zeros((len(meas.mse), 3))
        self.mse_tris = np.zeros(len(meas.mse), dtype=np.int64)
        self.mse_bary = np.zeros((len(meas.mse), 3))
        for i, ms in enumerate(meas.mse):
            hit = mesh.locate((ms.r, ms.z))
            if hit is None:
                raise OutsideMeshError(
                    f"MSE point at ({ms.r}, {ms.z}) is outside the mesh"
                )
            t, lam = hit
            self.mse_tris[i], self.mse_bary[i] = t, lam
            self.mse_rows_idx[i] = mesh.triangles[t]
            self.mse_br_val[i] = -gz[t] / ms.r
            self.mse_bz_val[i] = gr[t] / ms.r

        self._psi_vac: Optional[np.ndarray] = None
        self._system = system

    def vacuum_flux(self, system: StiffnessSystem) -> np.ndarray:
        if self._psi_vac is None or self._system is not system:
            self._psi_vac = system.solve(None, self.h)
            self._system = system
        return self._psi_vac

    def probe_apply(self, psi_cols: np.ndarray) -> np.ndarray:
        """Apply every probe functional to columns (or a vector) of psi."""
        v = psi_cols[self.probe_rows_idx]  # (p, 3) or (p, 3, k)
        return np.einsum("pv...,pv->p...", v, self.probe_rows_val)

    def mse_field_apply(self, psi_cols: np.ndarray, i: int) -> tuple:
        idx = self.mse_rows_idx[i]
        br = np.einsum("v...,v->...", psi_cols[idx], self.mse_br_val[i])
        bz = np.einsum("v...,v->...", psi_cols[idx], self.mse_bz_val[i])
        return br, bz


# -- linearization -------------------------------------------------------------


@dataclass
class LinearizedObservation:
    """Weighted affine observation model: residuals = E u + F."""

    E: np.ndarray
    F: np.ndarray
    slices: dict[str, slice]


def linearize(
    mesh: TriangularMesh,
    system: StiffnessSystem,
    basis: ReducedBasis,
    psi_n: np.ndarray,
    state_n: PlasmaState,
    current_n: PlasmaCurrentMatrix,
    meas: MeasurementSet,
    u_prev: Optional[np.ndarray] = None,
    geometry: Optional[ObservationGeometry] = None,
) -> LinearizedObservation:
    """Assemble E and F so that |E u + F|^2 is the weighted data misfit of
    the frozen measurement models, affine in u.

    The nonlinear flux-coefficient map is replaced by the affine relation
    through the current plasma-current matrix; each remaining nonlinearity
    is frozen at the current iterate as documented per family below.
    """
    geo = geometry or ObservationGeometry(mesh, meas, system)
    m = basis.m
    psi_vac = geo.vacuum_flux(system)
    psi_cols = system.solve_columns(current_n.D)  # (n, 3m)

    rows_E: list[np.ndarray] = []
    rows_F: list[float] = []
    slices: dict[str, slice] = {}

    def mark(name: str, start: int) -> None:
        slices[name] = slice(start, len(rows_F))

    # probes: response linear in psi, composed with the affine flux map
    start = len(rows_F)
    if meas.probes:
        resp_cols = geo.probe_apply(psi_cols)  # (p, 3m)
        resp_vac = geo.probe_apply(psi_vac)  # (p,)
        for i, pb in enumerate(meas.probes):
            if pb.weight == 0.0:
                continue
            w = math.sqrt(pb.weight)
            rows_E.append(w * resp_cols[i])
            rows_F.append(w * (resp_vac[i] - pb.value))
    mark("probes", start)

    # chords: field factor frozen at psi_n, rows live on the density block
    k1 = meas.weights.polarimetry
    k2 = meas.weights.interferometry
    gr_n, gz_n = mesh.gradient(psi_n)
    pol_rows: list[tuple[np.ndarray, float, float]] = []
    itf_rows: list[tuple[np.ndarray, float, float]] = []
    for ch, quad in zip(meas.chords, geo.chord_quads):
        if ch.weight == 0.0:
            continue
        tris, bary, pts, dl, nrm = quad
        pb = (state_n.psi_bar[mesh.triangles[tris]] * bary).sum(axis=1)
        inside = pb <= 1.0
        phi = np.zeros((len(pb), m))
        if inside.any():
            phi[inside] = basis.design(np.clip(pb[inside], 0.0, 1.0))
        if ch.polarimetry is not None and k1 > 0:
            fac = (gr_n[tris] * nrm[0] + gz_n[tris] * nrm[1]) / pts[:, 0] * dl
            fac = np.where(inside, fac, 0.0)
            pol_rows.append((fac @ phi, ch.polarimetry, ch.weight))
        if ch.interferometry is not None and k2 > 0:
            wgt = np.where(inside, dl, 0.0)
            itf_rows.append((wgt @ phi, ch.interferometry, ch.weight))

    start = len(rows_F)
    for row_c, val, wch in pol_rows:
        w = math.sqrt(k1 * wch)
        full = np.zeros(3 * m)
        full[2 * m :] = row_c
        rows_E.append(w * full)
        rows_F.append(-w * val)
    mark("polarimetry", start)

    start = len(rows_F)
    for row_c, val, wch in itf_rows:
        w = math.sqrt(k2 * wch)
        full = np.zeros(3 * m)
        full[2 * m :] = row_c
        rows_E.append(w * full)
        rows_F.append(-w * val)
    mark("interferometry", start)

    # pressure: normalized flux frozen at the current state
    start = len(rows_F)
    k3 = meas.weights.pressure
    if meas.pressure and k3 > 0:
        span = state_n.span
        pb_s = (state_n.psi_bar[mesh.triangles[geo.pressure_tris]]
                * geo.pressure_bary).sum(axis=1)
        integ = basis.integral_to_one(np.clip(pb_s, 0.0, 1.0))
        for i, ps in enumerate(meas.pressure):
            if ps.weight == 0.0:
                continue
            w = math.sqrt(k3 * ps.weight * geo.pressure_quadw[i])
            full = np.zeros(3 * m)
            if pb_s[i] <= 1.0:
                full[:m] = span * integ[i]
            rows_E.append(w * full)
            rows_F.append(-w * ps.value)
    mark("pressure", start)

    # MSE: cross-multiplied residual, toroidal field frozen from the
    # previous iterate's diamagnetic coefficients
    start = len(rows_F)
    k4 = meas.weights.mse
    if meas.mse and k4 > 0:
        b_prev = (
            np.zeros(m) if u_prev is None else np.asarray(u_prev)[m : 2 * m]
        )
        fprof = f_profile(basis, b_prev, state_n.psi_axis, state_n.psi_b, meas.f0)
        for i, ms in enumerate(meas.mse):
            if ms.weight == 0.0:
                continue
            a = ms.coeffs
            tg = math.tan(ms.value)
            cr, cz = a[0] - tg * a[3], a[1] - tg * a[4]
            cphi = a[2] - tg * a[5]
            pb = float(
                state_n.psi_bar[mesh.triangles[geo.mse_tris[i]]] @ geo.mse_bary[i]
            )
            bphi = (
                meas.f0 / ms.r
                if pb > 1.0
                else fprof(min(max(pb, 0.0), 1.0)) / ms.r
            )
            br_cols, bz_cols = geo.mse_field_apply(psi_cols, i)
            br_vac, bz_vac = geo.mse_field_apply(psi_vac, i)
            w = math.sqrt(k4 * ms.weight)
            rows_E.append(w * (cr * br_cols + cz * bz_cols))
            rows_F.append(w * (cr * br_vac + cz * bz_vac + cphi * bphi))
    mark("mse", start)

    E = (
        np.vstack(rows_E) if rows_E else np.zeros((0, 3 * m))
    )
    F = np.asarray(rows_F, dtype=float)
    return LinearizedObservation(E=E, F=F, slices=slices)


# -- measurement file format ---------------------------------------------------

FORMAT_VERSION = 1


def measurement_set_to_dict(meas: MeasurementSet) -> dict:
    return {
        "format": FORMAT_VERSION,
        "f0": meas.f0,
        "weights": {
            "polarimetry": meas.weights.polarimetry,
            "interferometry": meas.weights.interferometry,
            "pressure": meas.weights.pressure,
            "mse": meas.weights.mse,
        },
        "regularization": {
            "eps_a": meas.reg[0],
            "eps_b": meas.reg[1],
            "eps_ne": meas.reg[2],
        },
        "flux_loops": [
            {"r": l.r, "z": l.z, "value": l.value} for l in meas.flux_loops
        ],
        "probes": [
            {
                "r": p.r,
                "z": p.z,
                "tangent": list(p.tangent),
                "value": p.value,
                "weight": p.weight,
            }
            for p in meas.probes
        ],
        "chords": [
            {
                "start": [c.r0, c.z0],
                "end": [c.r1, c.z1],
                "polarimetry": c.polarimetry,
                "interferometry": c.interferometry,
                "weight": c.weight,
            }
            for c in meas.chords
        ],
        "pressure": [
            {"r": s.r, "value": s.value, "weight": s.weight} for s in meas.pressure
        ],
        "mse": [
            {
                "r": p.r,
                "z": p.z,
                "coeffs": list(p.coeffs),
                "value": p.value,
                "weight": p.weight,
            }
            for p in meas.mse
        ],
    }


def save_measurements(meas: MeasurementSet, path: str) -> None:
    with open(path, "w") as f:
        json.dump(measurement_set_to_dict(meas), f, indent=1)
        f.write("\n")


def load_measurements(path: str) -> MeasurementSet:
    with open(path) as f:
        doc = json.load(f)
    if doc.get("format") != FORMAT_VERSION:
        raise ValueError(
            f"unsupported measurement file format {doc.get('format')!r}"
        )
    w = doc.get("weights", {})
    reg = doc.get("regularization", {})
    return MeasurementSet(
        flux_loops=[
            FluxLoop(d["r"], d["z"], d["value"]) for d in doc.get("flux_loops", [])
        ],
        probes=[
            Probe(
                d["r"],
                d["z"],
                tuple(d["tangent"]),
                d["value"],
                d.get("weight", 1.0),
            )
            for d in doc.get("probes", [])
        ],
        chords=[
            Chord(
                d["start"][0],
                d["start"][1],
                d["end"][0],
                d["end"][1],
                d.get("polarimetry"),
                d.get("interferometry"),
                d.get("weight", 1.0),
            )
            for d in doc.get("chords", [])
        ],
        pressure=[
            PressureSample(d["r"], d["value"], d.get("weight", 1.0))
            for d in doc.get("pressure", [])
        ],
        mse=[
            MsePoint(
                d["r"],
                d["z"],
                tuple(d["coeffs"]),
                d["value"],
                d.get("weight", 1.0),
            )
            for d in doc.get("mse", [])
        ],
        weights=FamilyWeights(
            polarimetry=w.get("polarimetry", 1.0),
            interferometry=w.get("interferometry", 1.0),
            pressure=w.get("pressure", 1.0),
            mse=w.get("mse", 1.0),
        ),
        reg=(
            reg.get("eps_a", 1e-3),
            reg.get("eps_b", 1e-3),
            reg.get("eps_ne", 1e-3),
        ),
        f0=doc.get("f0", 1.0),
    )
