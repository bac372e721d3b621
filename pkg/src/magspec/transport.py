"""First transport iterate and the leading amplitude b0.

With v0 = 1 the first source term is

    f0 = |grad phi|^2 - 2 <A, grad phi> + V1 - i lap(phi),   V1 = V + |A|^2 + i div A,

and v1(x, omega) = -sign * int_0^inf f0(x + sign*t*omega, omega) dt.  The
amplitude b0 combines the two eikonal phases at the point x(xi) of the
reference plane Lambda_{omega0} with the Jacobian of xi -> x(xi).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .fields import FieldModel, _eval_points, eval_fields
from .quadrature import QuadratureSpec, integrate_rays
from .xray import DEFAULT_QUAD, LineFrame, _ray_pieces, _unit, eikonal_batch

DEFAULT_DELTA = 0.3


def _v1_points(model: FieldModel, pts: np.ndarray) -> np.ndarray:
    jet = _eval_points(model, pts, 1, full_d2=False)
    return jet.V + np.einsum("ni,ni->n", jet.A, jet.A) + 1j * jet.divA


def effective_potential_V1(model: FieldModel, x) -> complex:
    """V + |A|^2 + i div A at a single point."""
    jet = eval_fields(model, x, 1)
    A = np.ravel(jet.A)
    return complex(np.ravel(jet.V)[0] + A @ A + 1j * np.ravel(jet.divA)[0])


def f0_batch(model: FieldModel, points, omegas, sign: int,
             quad: QuadratureSpec = DEFAULT_QUAD) -> np.ndarray:
    """Source term f0 at a batch of (point, direction) pairs; complex (n,)."""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    omegas = np.atleast_2d(np.asarray(omegas, dtype=float))
    points, omegas = np.broadcast_arrays(points, omegas)
    v1 = _v1_points(model, points)
    if model.magnetic_is_zero:
        return v1
    eik = eikonal_batch(model, points, omegas, sign, order=2, quad=quad)
    A = _eval_points(model, points, 0).A
    g = eik.grad
    return (np.einsum("ni,ni->n", g, g) - 2 * np.einsum("ni,ni->n", A, g)
            + v1 - 1j * eik.lap)


def transport_source_f0(model: FieldModel, x, omega, sign: int,
                        quad: QuadratureSpec = DEFAULT_QUAD) -> complex:
    """f0 at one point for the phase of the given sign."""
    x = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(x)):
        raise ValueError("x must be finite")
    return complex(f0_batch(model, x[None], _unit(omega)[None], sign, quad)[0])


def v1_batch(model: FieldModel, points, omegas, sign: int,
             quad: QuadratureSpec = DEFAULT_QUAD) -> np.ndarray:
    """First transport iterate at a batch of points (nested half-line quadrature)."""
    if sign not in (1, -1):
        raise ValueError("sign must be +1 or -1")
    points = np.atleast_2d(np.asarray(points, dtype=float))
    omegas = np.atleast_2d(np.asarray(omegas, dtype=float))
    points, omegas = np.broadcast_arrays(points, omegas)
    if model.magnetic_is_zero and model.electric_is_zero:
        return np.zeros(points.shape[0], dtype=complex)
    rays = sign * omegas

    def integrand(p, ray_dir):
        return f0_batch(model, p, sign * ray_dir, sign, quad)

    pieces = _ray_pieces(model, points, rays, True, "both", quad)
    return -sign * integrate_rays(integrand, points, rays, pieces, quad)[:, 0]


@dataclass(frozen=True)
class TransportJet:
    """Values of the first transport step at one point."""

    v1: complex
    f0: complex
    V1: complex
    point: tuple
    omega: tuple
    sign: int


def transport_v1(model: FieldModel, x, omega, sign: int,
                 quad: QuadratureSpec = DEFAULT_QUAD) -> TransportJet:
    """v1 together with f0 and V1 at ``x``."""
    x = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(x)):
        raise ValueError("x must be finite")
    w = _unit(omega)
    return TransportJet(
        v1=complex(v1_batch(model, x[None], w[None], sign, quad)[0]),
        f0=transport_source_f0(model, x, w, sign, quad),
        V1=effective_potential_V1(model, x),
        point=tuple(x.tolist()),
        omega=tuple(w.tolist()),
        sign=sign,
    )


@dataclass(frozen=True)
class AmplitudeFrame:
    """Directions omega, omega' inside the cone {<w, omega0> > delta}."""

    omega0: np.ndarray
    omega: np.ndarray
    omega_prime: np.ndarray
    delta: float = DEFAULT_DELTA

    def __post_init__(self):
        if not 0 < self.delta < 1:
            raise ValueError("cone parameter delta must lie in (0, 1)")
        for name in ("omega0", "omega", "omega_prime"):
            object.__setattr__(self, name, _unit(getattr(self, name)))
        if not self.omega0.size == self.omega.size == self.omega_prime.size:
            raise ValueError("directions must share a dimension")
        for name in ("omega", "omega_prime"):
            c = float(getattr(self, name) @ self.omega0)
            if c <= self.delta:
                raise ValueError(f"{name} violates the cone condition: <{name}, omega0> = {c:.6g} <= {self.delta}")

    @property
    def dimension(self) -> int:
        return self.omega0.size

    def linear_map(self) -> np.ndarray:
        """Matrix of xi -> xi - <xi, omega0>/<omega+omega', omega0> (omega+omega')."""
        s = self.omega + self.omega_prime
        return np.eye(self.dimension) - np.outer(s, self.omega0) / (s @ self.omega0)

    def x_of_xi(self, xi_points) -> np.ndarray:
        """Apply the change of variables to ambient points (..., d)."""
        return np.asarray(xi_points, dtype=float) @ self.linear_map().T

    def jacobian(self) -> float:
        """|det| of the induced map Lambda_omega -> Lambda_omega0."""
        E = LineFrame.from_omega(self.omega).basis
        E0 = LineFrame.from_omega(self.omega0).basis
        return float(abs(np.linalg.det(E0 @ self.linear_map() @ E.T)))


def amplitude_b0(model: FieldModel, aframe: AmplitudeFrame, xi,
                 quad: QuadratureSpec = DEFAULT_QUAD) -> np.ndarray:
    """Leading amplitude b0(omega, omega', xi) for impact coordinates ``xi``.

    ``xi`` holds coordinates in the impact-plane basis of ``aframe.omega``:
    shape (d-1,) for a single point, (n, d-1) for a batch (a scalar or 1-D
    array of offsets is accepted in d=2).  Returns a complex array of shape (n,).
    """
    d = aframe.dimension
    xi = np.asarray(xi, dtype=float)
    if d == 2 and xi.ndim <= 1:
        xi = xi.reshape(-1, 1)
    xi = np.atleast_2d(xi)
    frame = LineFrame.from_omega(aframe.omega)
    amb = xi @ frame.basis
    x = aframe.x_of_xi(amb)
    if model.magnetic_is_zero:
        return np.zeros(x.shape[0], dtype=complex)
    phi_minus = eikonal_batch(model, x, aframe.omega_prime, -1, 0, quad).phi
    phi_plus = eikonal_batch(model, x, aframe.omega, 1, 0, quad).phi
    s = aframe.omega + aframe.omega_prime
    a0 = 0.5 * (aframe.omega0 @ s) * (np.exp(1j * (phi_minus - phi_plus)) - 1.0)
    return aframe.jacobian() * a0
