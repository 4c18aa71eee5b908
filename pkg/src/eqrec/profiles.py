"""Reduced-basis representation of the three unknown profile functions on
the normalized-flux interval [0, 1]: the pressure gradient A, the
diamagnetic source B, and the electron density n_e.

The default basis is a clamped cubic B-spline family with uniform knots; a
monomial basis is available for closed-form checks.  The smoothness
penalty integrates squared second derivatives exactly.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.interpolate import BSpline

from .errors import UnphysicalProfileError
from .fem import MU0

_DOMAIN_SLACK = 1e-9
_GAUSS2 = (np.array([-1.0, 1.0]) / np.sqrt(3.0), np.array([1.0, 1.0]))


@dataclass
class ReducedBasis:
    """m smooth functions on [0, 1] spanning one unknown profile."""

    kind: str  # 'bspline' | 'monomial'
    m: int
    _splines: list = field(default_factory=list, repr=False)
    _antiderivatives: list = field(default_factory=list, repr=False)
    _knots: np.ndarray = field(default=None, repr=False)  # type: ignore[assignment]
    _S: np.ndarray = field(default=None, repr=False)  # type: ignore[assignment]

    def __post_init__(self) -> None:
        if self.m < 1:
            raise ValueError("basis needs at least one function")
        if self.kind == "bspline":
            if self.m < 4:
                raise ValueError("cubic B-spline basis needs m >= 4")
            interior = np.linspace(0.0, 1.0, self.m - 2)[1:-1]
            self._knots = np.concatenate([[0.0] * 4, interior, [1.0] * 4])
            eye = np.eye(self.m)
            self._splines = [BSpline(self._knots, eye[i], 3) for i in range(self.m)]
            self._antiderivatives = [s.antiderivative() for s in self._splines]
        elif self.kind == "monomial":
            pass
        else:
            raise ValueError(f"unknown basis kind '{self.kind}'")

    # -- evaluation -------------------------------------------------------

    def _clamp(self, x) -> np.ndarray:
        x = np.atleast_1d(np.asarray(x, dtype=float))
        if (x < -_DOMAIN_SLACK).any() or (x > 1.0 + _DOMAIN_SLACK).any():
            bad = x[(x < -_DOMAIN_SLACK) | (x > 1.0 + _DOMAIN_SLACK)][0]
            raise ValueError(f"profile argument {bad} outside [0, 1]")
        return np.clip(x, 0.0, 1.0)

    def design(self, x) -> np.ndarray:
        """Matrix of basis values, shape (len(x), m)."""
        x = self._clamp(x)
        if self.kind == "monomial":
            return np.vander(x, self.m, increasing=True)
        return BSpline.design_matrix(x, self._knots, 3).toarray()

    def integral_to_one(self, x) -> np.ndarray:
        """Matrix of integrals from x to 1 of each basis function."""
        x = self._clamp(x)
        if self.kind == "monomial":
            k = np.arange(self.m)
            return (1.0 - x[:, None] ** (k + 1)) / (k + 1)
        out = np.empty((len(x), self.m))
        for i, anti in enumerate(self._antiderivatives):
            out[:, i] = anti(1.0) - anti(x)
        return out

    def second_derivative_penalty(self) -> np.ndarray:
        """S with S_ij = integral of phi_i'' phi_j'' over [0, 1], exact."""
        if self._S is not None:
            return self._S
        if self.kind == "monomial":
            k = np.arange(self.m)
            fac = k * (k - 1)
            power = k[:, None] + k[None, :] - 3  # exponent + 1 after integration
            with np.errstate(divide="ignore", invalid="ignore"):
                S = np.where(
                    (k[:, None] >= 2) & (k[None, :] >= 2),
                    fac[:, None] * fac[None, :] / power,
                    0.0,
                )
        else:
            d2 = [s.derivative(2) for s in self._splines]
            spans = np.unique(self._knots)
            gx, gw = _GAUSS2
            S = np.zeros((self.m, self.m))
            for a, b in zip(spans[:-1], spans[1:]):
                mid, half = 0.5 * (a + b), 0.5 * (b - a)
                # second derivatives are piecewise quadratic products,
                # integrated exactly by 2-point Gauss per knot span
                for xg, wg in zip(mid + half * gx, half * gw):
                    v = np.array([f(xg) for f in d2])
                    S += wg * np.outer(v, v)
        self._S = S
        return S


def eval_profile(basis: ReducedBasis, coeffs: Sequence[float], x) -> np.ndarray:
    """Profile value sum_i coeffs_i phi_i(x); scalar in, scalar out."""
    scalar = np.isscalar(x) or np.ndim(x) == 0
    vals = basis.design(x) @ np.asarray(coeffs, dtype=float)
    return float(vals[0]) if scalar else vals


@dataclass
class ProfileCoefficients:
    """Stacked unknowns (a for A, b for B, c for n_e), m entries each."""

    a: np.ndarray
    b: np.ndarray
    c: np.ndarray

    def __post_init__(self) -> None:
        self.a = np.asarray(self.a, dtype=float)
        self.b = np.asarray(self.b, dtype=float)
        self.c = np.asarray(self.c, dtype=float)
        if not (len(self.a) == len(self.b) == len(self.c)):
            raise ValueError("coefficient blocks must have equal length")
        if not np.isfinite(self.stacked()).all():
            raise ValueError("profile coefficients must be finite")

    @property
    def m(self) -> int:
        return len(self.a)

    def stacked(self) -> np.ndarray:
        return np.concatenate([self.a, self.b, self.c])

    @classmethod
    def from_stacked(cls, u: np.ndarray) -> "ProfileCoefficients":
        u = np.asarray(u, dtype=float)
        if len(u) % 3:
            raise ValueError("stacked coefficient vector length must be 3m")
        m = len(u) // 3
        return cls(u[:m], u[m : 2 * m], u[2 * m :])

    @classmethod
    def zeros(cls, m: int) -> "ProfileCoefficients":
        return cls(np.zeros(m), np.zeros(m), np.zeros(m))


def penalty_matrix(
    basis: ReducedBasis, eps: tuple[float, float, float]
) -> np.ndarray:
    """Block-diagonal Tikhonov matrix: u^T Lambda u penalizes the squared
    second derivatives of A, B and n_e with the three given strengths."""
    e1, e2, e3 = (float(e) for e in eps)
    if min(e1, e2, e3) < 0:
        raise ValueError("regularization parameters must be >= 0")
    S = basis.second_derivative_penalty()
    lam = np.zeros((3 * basis.m, 3 * basis.m))
    for k, e in enumerate((e1, e2, e3)):
        s = slice(k * basis.m, (k + 1) * basis.m)
        lam[s, s] = e * S
    return lam


def pressure_profile(
    basis: ReducedBasis, a: Sequence[float], psi_axis: float, psi_b: float
) -> Callable:
    """Pressure as a function of normalized flux, vanishing at the edge.

    A is the pressure derivative with respect to the (unnormalized) flux,
    so integrating over normalized flux picks up the span factor.
    """
    if not psi_axis > psi_b:
        raise ValueError("psi_axis must exceed psi_b")
    a = np.asarray(a, dtype=float)
    span = psi_axis - psi_b

    def p(x):
        scalar = np.isscalar(x) or np.ndim(x) == 0
        vals = span * (basis.integral_to_one(x) @ a)
        return float(vals[0]) if scalar else vals

    return p


def f_profile(
    basis: ReducedBasis,
    b: Sequence[float],
    psi_axis: float,
    psi_b: float,
    f0: float,
) -> Callable:
    """Diamagnetic function r*B_phi versus normalized flux.

    B carries (f f')/mu0 with respect to the flux, hence
    f^2(x) = f0^2 + 2 mu0 span * integral_x^1 B; the sign follows f0.
    """
    if not psi_axis > psi_b:
        raise ValueError("psi_axis must exceed psi_b")
    if f0 == 0.0:
        raise ValueError("vacuum diamagnetic value f0 must be nonzero")
    b = np.asarray(b, dtype=float)
    span = psi_axis - psi_b
    sign = 1.0 if f0 > 0 else -1.0

    def f(x):
        scalar = np.isscalar(x) or np.ndim(x) == 0
        rad = f0 * f0 + 2.0 * MU0 * span * (basis.integral_to_one(x) @ b)
        if (rad <= 0).any():
            xa = np.atleast_1d(np.asarray(x, dtype=float))
            bad = float(xa[np.nonzero(np.atleast_1d(rad) <= 0)[0][0]])
            raise UnphysicalProfileError(
                f"squared diamagnetic function non-positive at psi_bar={bad}"
            )
        vals = sign * np.sqrt(rad)
        return float(vals[0]) if scalar else vals

    return f


def sample_profiles(
    basis: ReducedBasis,
    coeffs: ProfileCoefficients,
    psi_axis: float,
    psi_b: float,
    f0: float,
    n: int = 101,
) -> dict[str, np.ndarray]:
    """Uniform samples of A, B, n_e and the derived p and f on [0, 1]."""
    x = np.linspace(0.0, 1.0, n)
    design = basis.design(x)
    return {
        "psi_bar": x,
        "A": design @ coeffs.a,
        "B": design @ coeffs.b,
        "n_e": design @ coeffs.c,
        "p": pressure_profile(basis, coeffs.a, psi_axis, psi_b)(x),
        "f": f_profile(basis, coeffs.b, psi_axis, psi_b, f0)(x),
    }
