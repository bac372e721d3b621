"""Line integrals of the potentials: M, X and the half-line eikonal phases.

``M(omega, xi)`` integrates <A, omega> along the line ``t*omega + xi``;
``X(omega, xi)`` is minus one half of the line integral of V.  The phases
``phi_plus`` / ``phi_minus`` integrate <A, omega> over the forward / backward
half line, and their gradients and Laplacians are obtained by differentiating
under the integral sign with the analytic derivatives of A.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .fields import FieldModel, MagneticTerm, _eval_points, potential_A, potential_V
from .quadrature import QuadratureSpec, build_pieces, integrate_rays

DEFAULT_QUAD = QuadratureSpec()
_OFFSETS = np.array([-8.0, -4.0, -2.0, 0.0, 2.0, 4.0, 8.0])


def _unit(v) -> np.ndarray:
    v = np.asarray(v, dtype=float).ravel()
    n = np.linalg.norm(v)
    if not np.isfinite(n) or n == 0:
        raise ValueError(f"direction must be a finite nonzero vector, got {v!r}")
    return v / n


def plane_basis(omega) -> np.ndarray:
    """Orthonormal basis of the plane orthogonal to ``omega``, shape (d-1, d)."""
    omega = _unit(omega)
    if omega.size == 2:
        return np.array([[-omega[1], omega[0]]])
    seed = np.zeros(3)
    seed[np.argmin(np.abs(omega))] = 1.0
    e1 = seed - omega * (seed @ omega)
    e1 /= np.linalg.norm(e1)
    e2 = np.cross(omega, e1)
    return np.stack([e1, e2])


@dataclass(frozen=True)
class LineFrame:
    """A direction on the sphere and an orthonormal basis of its impact plane."""

    omega: np.ndarray
    basis: np.ndarray

    @classmethod
    def from_omega(cls, omega) -> "LineFrame":
        w = _unit(omega)
        if w.size not in (2, 3):
            raise ValueError("directions must live in R^2 or R^3")
        return cls(w, plane_basis(w))

    @classmethod
    def from_angle(cls, theta: float) -> "LineFrame":
        return cls.from_omega((math.cos(theta), math.sin(theta)))

    @property
    def dimension(self) -> int:
        return self.omega.size

    def point(self, xi) -> np.ndarray:
        """Ambient point for impact-plane coordinates ``xi`` (scalar allowed in d=2)."""
        xi = np.atleast_1d(np.asarray(xi, dtype=float))
        if xi.shape[-1] != self.dimension - 1:
            raise ValueError(f"expected {self.dimension - 1} impact coordinates")
        return xi @ self.basis

    def project(self, x) -> np.ndarray:
        """Impact-plane coordinates of the orthogonal projection of x."""
        return np.asarray(x, dtype=float) @ self.basis.T


# -- ray layout ---------------------------------------------------------------

def _relevant_terms(model: FieldModel, use: str):
    if use == "A":
        return [t for t in model.magnetic_terms if t.amplitude != 0]
    if use == "V":
        return [t for t in model.electric_terms if t.amplitude != 0]
    return [t for t in (*model.magnetic_terms, *model.electric_terms) if t.amplitude != 0]


def _ray_pieces(model: FieldModel, bases, dirs, half_line: bool, use: str, quad: QuadratureSpec):
    terms = _relevant_terms(model, use)
    L = bases.shape[0]
    bps, scales = [], []
    for term in terms:
        rel = np.asarray(term.center) - bases
        tc = np.einsum("ld,ld->l", rel, dirs)
        dist = np.linalg.norm(rel - tc[:, None] * dirs, axis=1)
        if term.power is None:
            w_eff = np.full(L, term.width)
        else:
            w_eff = np.sqrt(term.width**2 + dist**2)
        bps.append(tc[:, None] + w_eff[:, None] * _OFFSETS)
        scales.append(quad.tail_factor * w_eff)
    bp = np.concatenate(bps, axis=1)
    scale = np.max(np.stack(scales), axis=0)
    return build_pieces(bp, scale, half_line)


def _integrate(model, bases, dirs, func, half_line, use, quad):
    bases = np.atleast_2d(np.asarray(bases, dtype=float))
    dirs = np.atleast_2d(np.asarray(dirs, dtype=float))
    bases, dirs = np.broadcast_arrays(bases, dirs)
    if not _relevant_terms(model, use):
        return None
    pieces = _ray_pieces(model, bases, dirs, half_line, use, quad)
    return integrate_rays(func, bases, dirs, pieces, quad)


def xray_M_batch(model: FieldModel, omegas, points, quad: QuadratureSpec = DEFAULT_QUAD) -> np.ndarray:
    """M along the lines through ``points`` with directions ``omegas``; shape (L,)."""

    def integrand(p, w):
        return np.einsum("nd,nd->n", potential_A(model, p), w)

    out = _integrate(model, points, omegas, integrand, False, "A", quad)
    if out is None:
        return np.zeros(np.atleast_2d(points).shape[0])
    return out[:, 0]


def xray_X_batch(model: FieldModel, omegas, points, quad: QuadratureSpec = DEFAULT_QUAD) -> np.ndarray:
    """X along lines; shape (L,)."""

    def integrand(p, _w):
        return -0.5 * potential_V(model, p)

    out = _integrate(model, points, omegas, integrand, False, "V", quad)
    if out is None:
        return np.zeros(np.atleast_2d(points).shape[0])
    return out[:, 0]


def xray_M(model: FieldModel, frame: LineFrame, xi, quad: QuadratureSpec = DEFAULT_QUAD) -> float:
    """M(omega, xi) for impact coordinates ``xi`` in the frame's plane."""
    return float(xray_M_batch(model, frame.omega[None], frame.point(xi)[None], quad)[0])


def xray_X(model: FieldModel, frame: LineFrame, xi, quad: QuadratureSpec = DEFAULT_QUAD) -> float:
    """X(omega, xi) = -1/2 times the line integral of V."""
    return float(xray_X_batch(model, frame.omega[None], frame.point(xi)[None], quad)[0])


def grid_points_2d(thetas, s) -> tuple[np.ndarray, np.ndarray]:
    """Directions and impact points s*omega_perp(theta) for a (theta, s) grid."""
    th, ss = np.meshgrid(np.asarray(thetas, float), np.asarray(s, float), indexing="ij")
    omegas = np.stack([np.cos(th), np.sin(th)], axis=-1).reshape(-1, 2)
    perp = np.stack([-np.sin(th), np.cos(th)], axis=-1).reshape(-1, 2)
    return omegas, perp * ss.reshape(-1, 1)


def xray_grid_2d(model: FieldModel, thetas, s, which: str = "M",
                 quad: QuadratureSpec = DEFAULT_QUAD) -> np.ndarray:
    """M or X on a (theta, s) grid in d=2, shape (n_theta, n_s)."""
    omegas, pts = grid_points_2d(thetas, s)
    fn = xray_M_batch if which == "M" else xray_X_batch
    return fn(model, omegas, pts, quad).reshape(len(np.atleast_1d(thetas)), -1)


# -- eikonal phases -------------------------------------------------------------

@dataclass
class EikonalJet:
    """phi and (optionally) its gradient and Laplacian at a batch of points."""

    phi: np.ndarray
    grad: np.ndarray | None = None
    lap: np.ndarray | None = None


def eikonal_batch(model: FieldModel, points, omegas, sign: int, order: int = 0,
                  quad: QuadratureSpec = DEFAULT_QUAD) -> EikonalJet:
    """phi_sign(x, omega) = -sign * int_0^inf <A(x + sign*t*omega), omega> dt.

    Derivatives are integrals of the analytic derivatives of A along the
    same half line.
    """
    if sign not in (1, -1):
        raise ValueError("sign must be +1 or -1")
    if order not in (0, 1, 2):
        raise ValueError("order must be 0, 1 or 2")
    points = np.atleast_2d(np.asarray(points, dtype=float))
    omegas = np.atleast_2d(np.asarray(omegas, dtype=float))
    points, omegas = np.broadcast_arrays(points, omegas)
    n, d = points.shape

    def integrand(p, ray_dir):
        w = sign * ray_dir
        jet = _eval_points(model, p, order, full_d2=False)
        cols = [np.einsum("nd,nd->n", jet.A, w)[:, None]]
        if order >= 1:
            cols.append(np.einsum("nij,ni->nj", jet.dA, w))
        if order >= 2:
            cols.append(np.einsum("ni,ni->n", jet.lapA, w)[:, None])
        return np.concatenate(cols, axis=1)

    out = _integrate(model, points, sign * omegas, integrand, True, "A", quad)
    if out is None:
        out = np.zeros((n, 1 + (d if order >= 1 else 0) + (1 if order >= 2 else 0)))
    out = -sign * out
    jet = EikonalJet(phi=out[:, 0])
    if order >= 1:
        jet.grad = out[:, 1:1 + d]
    if order >= 2:
        jet.lap = out[:, 1 + d]
    return jet


def eikonal_phase(model: FieldModel, x, omega, sign: int, order: int = 0,
                  quad: QuadratureSpec = DEFAULT_QUAD) -> EikonalJet:
    """Single-point version of :func:`eikonal_batch` (arrays keep a length-1 axis)."""
    x = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(x)):
        raise ValueError("x must be finite")
    return eikonal_batch(model, x[None], _unit(omega)[None], sign, order, quad)


# -- decay and support bounds -----------------------------------------------------

@dataclass
class DecayFit:
    slope: float | None
    intercept: float | None
    s: np.ndarray
    values: np.ndarray
    degenerate: bool = False
    message: str = ""


def decay_exponent_fit(model: FieldModel, omega, s_samples,
                       quad: QuadratureSpec = DEFAULT_QUAD) -> DecayFit:
    """Least-squares slope of log|M(omega, s e)| against log s.

    ``e`` is the first impact-plane basis vector.  If M vanishes anywhere on
    the sample range the fit is skipped and the result is flagged degenerate.
    """
    frame = LineFrame.from_omega(omega)
    s = np.asarray(s_samples, dtype=float)
    if np.any(s <= 0):
        raise ValueError("decay samples must be positive")
    pts = s[:, None] * frame.basis[0]
    vals = xray_M_batch(model, np.broadcast_to(frame.omega, pts.shape), pts, quad)
    if np.any(np.abs(vals) <= 1e-300):
        return DecayFit(None, None, s, vals, True, "M vanishes on the sample range")
    slope, intercept = np.polyfit(np.log(s), np.log(np.abs(vals)), 1)
    return DecayFit(float(slope), float(intercept), s, vals)


def _term_line_bound(term, dist: np.ndarray) -> np.ndarray:
    """Upper bound on one term's |M| (magnetic) or |X| (electric) at line distance ``dist``."""
    a, w = abs(term.amplitude), term.width
    d = np.maximum(dist, 0.0)
    if isinstance(term, MagneticTerm):
        if term.kind == "gauge_gradient":
            return np.zeros_like(d)
        if term.kind == "stream_gaussian":
            # profile s*exp(-s^2/2) peaks at s=w
            x = np.maximum(d, w) / w
            return math.sqrt(2 * math.pi) * a * x * np.exp(-0.5 * x * x)
        return 2 * a * w / np.maximum(d, w)
    if term.kind == "gaussian":
        return 0.5 * a * math.sqrt(2 * math.pi) * w * np.exp(-0.5 * (d / w) ** 2)
    p = term.exponent
    cp = math.sqrt(math.pi) * math.gamma(0.5 * (p - 1)) / math.gamma(0.5 * p)
    return 0.5 * a * w**p * cp * (w * w + d * d) ** (0.5 * (1 - p))


def support_radius(model: FieldModel, eps: float, which: str = "M", r_max: float = 1e15) -> float:
    """Radius beyond which |M| (or |X|) is guaranteed to stay below ``eps``.

    Uses term-wise bounds and ``dist >= |xi| - |center|``; returns ``inf`` if
    the bound does not fall below ``eps`` before ``r_max``.
    """
    terms = _relevant_terms(model, "A" if which == "M" else "V")
    terms = [t for t in terms if not (isinstance(t, MagneticTerm) and t.kind == "gauge_gradient")]
    if not terms:
        return 0.0
    offs = [float(np.linalg.norm(t.center)) for t in terms]

    def bound(r):
        return sum(float(_term_line_bound(t, np.array(r - o))) for t, o in zip(terms, offs))

    lo = max(o + t.width for t, o in zip(terms, offs))
    if bound(lo) <= eps:
        return lo
    hi = 2 * lo
    while bound(hi) > eps:
        hi *= 2
        if hi > r_max:
            return math.inf
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if bound(mid) > eps:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 1e-12 * hi:
            break
    return hi
