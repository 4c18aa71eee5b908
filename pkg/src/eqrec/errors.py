"""Exception types shared across the package."""


class MeshFormatError(Exception):
    """Mesh file cannot be parsed."""


class MeshValidationError(ValueError):
    """Mesh violates a structural invariant (orientation, radii, boundary)."""


class OutsideMeshError(ValueError):
    """A point expected inside the domain fell outside the triangulation."""


class DegeneratePlasmaError(RuntimeError):
    """Flux map has no usable plasma (no interior maximum, or axis flux
    does not exceed the boundary flux)."""


class UnphysicalProfileError(ValueError):
    """Derived physical profile is invalid (negative squared diamagnetic
    function)."""


class SingularNormalEquationError(RuntimeError):
    """Normal-equation matrix is singular (rank-deficient data with zero
    regularization)."""
