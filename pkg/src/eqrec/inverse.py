"""Outer identification loop: regularized normal-equation solves for the
profile coefficients alternating with single fixed-point flux updates.

Each outer iteration freezes the plasma-current matrix at the current
flux, solves the 3m x 3m normal equation for the coefficients, then takes
exactly one fixed-point flux update, mirroring the real-time algorithm.
The reported cost breakdown is recomputed with the exact (unfrozen)
measurement models.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.linalg

from .errors import DegeneratePlasmaError, SingularNormalEquationError
from .fem import StiffnessSystem, assemble_stiffness
from .flux import PlasmaState, analyze
from .forward import assemble_plasma_current, initial_plasma_state
from .mesh import TriangularMesh
from .observations import (
    MeasurementSet,
    ObservationGeometry,
    chord_integrals,
    linearize,
    mse_angle,
    poloidal_field,
    pressure_samples,
    probe_response,
    trapezoid_weights,
)
from .profiles import (
    ProfileCoefficients,
    ReducedBasis,
    penalty_matrix,
    f_profile,
)


@dataclass
class ReconstructionConfig:
    """Knobs of the identification loop.

    Coefficient scales express each block in "typical magnitude" units, so
    the default regularization strengths transfer between devices; they
    also keep the normal equation well conditioned when the raw SI scales
    of the three unknowns differ by many orders of magnitude.
    """

    basis_kind: str = "bspline"
    m: int = 8
    eps: Optional[tuple[float, float, float]] = None  # None: take from data file
    weights: Optional[tuple[float, float, float, float]] = None
    max_outer: int = 30
    tol_u: float = 1e-6
    tol_psi: float = 1e-8
    relax: float = 1.0
    scale_a: float = 1.0
    scale_b: float = 1.0
    scale_ne: float = 1.0
    xpoint_search: bool = True
    fp_tol: float = 1e-8
    fp_max_iter: int = 50

    def __post_init__(self) -> None:
        if self.max_outer < 1:
            raise ValueError("outer iteration cap must be >= 1")
        if min(self.tol_u, self.tol_psi) <= 0:
            raise ValueError("convergence tolerances must be positive")
        if not 0 < self.relax <= 1.0:
            raise ValueError("relaxation factor must be in (0, 1]")
        if min(self.scale_a, self.scale_b, self.scale_ne) <= 0:
            raise ValueError("coefficient scales must be positive")

    def make_basis(self) -> ReducedBasis:
        return ReducedBasis(self.basis_kind, self.m)

    def block_scales(self, m: int) -> np.ndarray:
        return np.concatenate(
            [
                np.full(m, self.scale_a),
                np.full(m, self.scale_b),
                np.full(m, self.scale_ne),
            ]
        )


@dataclass
class CostBreakdown:
    j0: float
    j1: float
    j2: float
    j3: float
    j4: float
    j_reg: float
    total: float

    def as_dict(self) -> dict[str, float]:
        return {
            "probes": self.j0,
            "polarimetry": self.j1,
            "interferometry": self.j2,
            "pressure": self.j3,
            "mse": self.j4,
            "regularization": self.j_reg,
            "total": self.total,
        }


@dataclass
class ReconstructionResult:
    u: ProfileCoefficients
    psi: np.ndarray
    state: Optional[PlasmaState]
    cost: CostBreakdown
    outer_iterations: int
    converged: bool
    timings: list[dict[str, float]] = field(default_factory=list)
    du: float = np.inf
    dpsi: float = np.inf


def solve_normal_equation(
    E: np.ndarray, F: np.ndarray, lam: np.ndarray
) -> np.ndarray:
    """Minimizer of |E u + F|^2 + u^T lam u via the normal equation."""
    E = np.asarray(E, dtype=float)
    F = np.asarray(F, dtype=float)
    M = E.T @ E + np.asarray(lam, dtype=float)
    rhs = -E.T @ F
    try:
        cho = scipy.linalg.cho_factor(M)
        return scipy.linalg.cho_solve(cho, rhs)
    except scipy.linalg.LinAlgError:
        rank = int(np.linalg.matrix_rank(M))
        raise SingularNormalEquationError(
            f"normal-equation matrix is singular (estimated rank {rank} of {M.shape[0]})"
        )


def evaluate_cost(
    mesh: TriangularMesh,
    meas: MeasurementSet,
    basis: ReducedBasis,
    u: ProfileCoefficients,
    psi: np.ndarray,
    lam: Optional[np.ndarray] = None,
    u_scaled: Optional[np.ndarray] = None,
    xpoint_search: bool = True,
) -> CostBreakdown:
    """Cost terms with the full nonlinear measurement models (no freezes).

    A flux map without usable plasma (no interior maximum) is treated as
    vacuum: zero pressure, density and plasma toroidal field corrections.
    The regularization term is evaluated on u_scaled when block scaling is
    in use, matching what the normal equation penalized.
    """
    try:
        state: Optional[PlasmaState] = analyze(
            mesh, psi, xpoint_search=xpoint_search
        )
    except DegeneratePlasmaError:
        state = None

    j0 = 0.0
    for pb in meas.probes:
        j0 += pb.weight * (probe_response(mesh, psi, pb) - pb.value) ** 2

    j1 = j2 = 0.0
    for ch in meas.chords:
        if state is None:
            pol, itf = 0.0, 0.0
        else:
            pol, itf = chord_integrals(mesh, state.psi_bar, psi, basis, u.c, ch)
        if ch.polarimetry is not None:
            j1 += ch.weight * (pol - ch.polarimetry) ** 2
        if ch.interferometry is not None:
            j2 += ch.weight * (itf - ch.interferometry) ** 2

    j3 = 0.0
    if meas.pressure:
        radii = np.array([s.r for s in meas.pressure])
        qw = trapezoid_weights(radii)
        if state is None:
            model = np.zeros(len(radii))
        else:
            model = pressure_samples(basis, u.a, state, mesh, radii)
        for i, s in enumerate(meas.pressure):
            j3 += s.weight * qw[i] * (model[i] - s.value) ** 2

    j4 = 0.0
    if meas.mse:
        fcall = None
        if state is not None:
            fcall = f_profile(basis, u.b, state.psi_axis, state.psi_b, meas.f0)
        for ms in meas.mse:
            br, bz = poloidal_field(mesh, psi, (ms.r, ms.z))
            if state is None:
                bphi = meas.f0 / ms.r
            else:
                pb = mesh.interpolate(state.psi_bar, (ms.r, ms.z))
                bphi = (
                    meas.f0 / ms.r
                    if pb > 1.0
                    else fcall(min(max(pb, 0.0), 1.0)) / ms.r
                )
            j4 += ms.weight * (mse_angle(br, bz, bphi, ms.coeffs) - ms.value) ** 2

    j_reg = 0.0
    if lam is not None:
        v = u.stacked() if u_scaled is None else np.asarray(u_scaled)
        j_reg = float(v @ lam @ v)

    w = meas.weights
    total = (
        j0
        + w.polarimetry * j1
        + w.interferometry * j2
        + w.pressure * j3
        + w.mse * j4
        + j_reg
    )
    return CostBreakdown(j0, j1, j2, j3, j4, j_reg, total)


def reconstruct(
    mesh: TriangularMesh,
    meas: MeasurementSet,
    config: Optional[ReconstructionConfig] = None,
    warm: Optional[ReconstructionResult] = None,
    system: Optional[StiffnessSystem] = None,
    geometry: Optional[ObservationGeometry] = None,
) -> ReconstructionResult:
    """Identify the profile coefficients and equilibrium from measurements.

    Loop: flux analysis -> plasma-current matrix -> linearize -> normal
    equation -> one relaxed fixed-point flux update; stops when the
    relative changes of both the coefficients and the flux drop below the
    configured thresholds.
    """
    config = config or ReconstructionConfig()
    if not meas.flux_loops:
        raise ValueError("boundary condition underdetermined: no flux loops")
    basis = config.make_basis()
    m = basis.m
    eps = config.eps if config.eps is not None else meas.reg
    if config.weights is not None:
        from .observations import FamilyWeights

        meas = MeasurementSet(
            flux_loops=meas.flux_loops,
            probes=meas.probes,
            chords=meas.chords,
            pressure=meas.pressure,
            mse=meas.mse,
            weights=FamilyWeights(*config.weights),
            reg=meas.reg,
            f0=meas.f0,
        )
    lam = penalty_matrix(basis, eps)
    scales = config.block_scales(m)

    if system is None:
        system = assemble_stiffness(mesh)
    geo = geometry or ObservationGeometry(mesh, meas, system)
    h = geo.h

    if warm is not None:
        psi = warm.psi.copy()
        u = warm.u.stacked().copy()
        state = analyze(mesh, psi, xpoint_search=config.xpoint_search)
    else:
        psi = system.solve(None, h)
        u = np.zeros(3 * m)
        state = initial_plasma_state(mesh, psi, mesh.limiter)

    timings: list[dict[str, float]] = []
    converged = False
    du = dpsi = np.inf
    it = 0
    for it in range(1, config.max_outer + 1):
        t: dict[str, float] = {}
        tic = time.perf_counter()
        current = assemble_plasma_current(mesh, state, basis)
        t["d_assembly"] = time.perf_counter() - tic

        tic = time.perf_counter()
        lin = linearize(
            mesh, system, basis, psi, state, current, meas,
            u_prev=u, geometry=geo,
        )
        t["linearize"] = time.perf_counter() - tic

        tic = time.perf_counter()
        u_scaled = solve_normal_equation(lin.E * scales, lin.F, lam)
        u_new = scales * u_scaled
        t["normal_solve"] = time.perf_counter() - tic

        tic = time.perf_counter()
        psi_new = system.solve(current.D @ u_new, h)
        if config.relax != 1.0:
            psi_new = config.relax * psi_new + (1.0 - config.relax) * psi
        t["picard_solve"] = time.perf_counter() - tic

        du = float(
            np.max(np.abs(u_new - u)) / max(np.max(np.abs(u_new)), 1e-300)
        )
        dpsi = float(
            np.max(np.abs(psi_new - psi)) / max(np.max(np.abs(psi_new)), 1e-300)
        )
        u, psi = u_new, psi_new

        if du < config.tol_u and dpsi < config.tol_psi:
            timings.append(t)
            converged = True
            break

        tic = time.perf_counter()
        state = _analyze_or_vacuum(mesh, psi, u, basis.m, config)
        t["flux_analysis"] = time.perf_counter() - tic
        timings.append(t)

    try:
        final_state: Optional[PlasmaState] = analyze(
            mesh, psi, xpoint_search=config.xpoint_search
        )
    except DegeneratePlasmaError:
        if np.max(np.abs(u[: 2 * m]), initial=0.0) > 0:
            raise
        final_state = None

    coeffs = ProfileCoefficients.from_stacked(u)
    cost = evaluate_cost(
        mesh,
        meas,
        basis,
        coeffs,
        psi,
        lam=lam,
        u_scaled=u / np.where(scales != 0, scales, 1.0),
        xpoint_search=config.xpoint_search,
    )
    return ReconstructionResult(
        u=coeffs,
        psi=psi,
        state=final_state,
        cost=cost,
        outer_iterations=it,
        converged=converged,
        timings=timings,
        du=du,
        dpsi=dpsi,
    )


def _analyze_or_vacuum(
    mesh: TriangularMesh,
    psi: np.ndarray,
    u: np.ndarray,
    m: int,
    config: ReconstructionConfig,
) -> PlasmaState:
    """Flux analysis that tolerates an (essentially) source-free iterate by
    falling back to the cold-start plasma guess; a degenerate flux with a
    genuine plasma source is an error."""
    try:
        return analyze(mesh, psi, xpoint_search=config.xpoint_search)
    except DegeneratePlasmaError:
        scale = float(np.max(np.abs(u), initial=0.0))
        if np.max(np.abs(u[: 2 * m]), initial=0.0) > 1e-12 * max(scale, 1.0):
            raise
        return initial_plasma_state(mesh, psi, mesh.limiter)
