"""Tokamak plasma current and equilibrium reconstruction.

Solves the free-boundary axisymmetric equilibrium on a fixed triangulation
and identifies the current-density profile functions and the electron
density from magnetic, polarimetric, interferometric, pressure and MSE
measurements by regularized least squares, fast enough for per-timestep
use.
"""

from .errors import (
    DegeneratePlasmaError,
    MeshFormatError,
    MeshValidationError,
    OutsideMeshError,
    SingularNormalEquationError,
    UnphysicalProfileError,
)
from .fem import MU0, StiffnessSystem, assemble_stiffness
from .fields import field_grid, toroidal_current_density, toroidal_field
from .flux import PlasmaState, analyze, find_axis, find_boundary_flux, normalize
from .forward import (
    ForwardResult,
    PlasmaCurrentMatrix,
    assemble_plasma_current,
    picard_step,
    plasma_current,
    solve_forward,
)
from .inverse import (
    CostBreakdown,
    ReconstructionConfig,
    ReconstructionResult,
    evaluate_cost,
    reconstruct,
    solve_normal_equation,
)
from .mesh import Point2, TriangularMesh, load_mesh, write_mesh
from .observations import (
    Chord,
    FamilyWeights,
    FluxLoop,
    LinearizedObservation,
    MeasurementSet,
    MsePoint,
    ObservationGeometry,
    PressureSample,
    Probe,
    boundary_condition,
    chord_integrals,
    linearize,
    load_measurements,
    mse_angle,
    poloidal_field,
    pressure_samples,
    probe_response,
    save_measurements,
)
from .profiles import (
    ProfileCoefficients,
    ReducedBasis,
    eval_profile,
    f_profile,
    penalty_matrix,
    pressure_profile,
    sample_profiles,
)

__version__ = "0.1.0"
