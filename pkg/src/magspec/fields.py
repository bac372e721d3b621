"""Electric and magnetic potentials built from analytic radial profiles.

Every term is a radial profile ``a * g(|x - c|^2 / w^2)`` with hand-coded
derivatives up to third order.  Magnetic terms are turned into vector
potentials in one of two ways:

* ``stream_*``: ``A = L grad(psi)`` with ``L`` the rotation by -90 degrees in
  the plane (d=2), or ``A = grad(psi) x e`` for a fixed axis ``e`` (d=3).
  Such fields are divergence free and, in d=2, have zero total flux.
* ``gauge_gradient``: ``A = grad(phi)`` for a decaying ``phi``; contributes
  nothing to the magnetic field.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

MAGNETIC_KINDS = ("stream_gaussian", "stream_lorentzian", "gauge_gradient")
ELECTRIC_KINDS = ("gaussian", "lorentzian_power")
GAUGE_PROFILES = ("gaussian",)

# Gaussian terms decay faster than any power; tail formulas use this cap.
RHO_CAP = 10.0


class FieldError(ValueError):
    """Invalid field description or evaluation request."""


def _as_point_tuple(values, name: str) -> tuple[float, ...]:
    arr = np.asarray(values, dtype=float).ravel()
    if not np.all(np.isfinite(arr)):
        raise FieldError(f"{name} must be finite, got {values!r}")
    return tuple(float(v) for v in arr)


def _check_width(width: float) -> float:
    width = float(width)
    if not np.isfinite(width) or width <= 0:
        raise FieldError(f"width must be a positive finite number, got {width!r}")
    return width


@dataclass(frozen=True)
class MagneticTerm:
    """One analytic contribution to the vector potential.

    ``axis`` is only used by stream terms in three dimensions; ``profile``
    only by gauge terms.
    """

    kind: str
    center: tuple[float, ...]
    amplitude: float = 1.0
    width: float = 1.0
    axis: tuple[float, ...] | None = None
    profile: str = "gaussian"

    def __post_init__(self):
        if self.kind not in MAGNETIC_KINDS:
            raise FieldError(f"unknown magnetic term kind {self.kind!r}")
        object.__setattr__(self, "center", _as_point_tuple(self.center, "center"))
        object.__setattr__(self, "width", _check_width(self.width))
        amp = float(self.amplitude)
        if not np.isfinite(amp):
            raise FieldError("amplitude must be finite")
        object.__setattr__(self, "amplitude", amp)
        if self.kind == "gauge_gradient" and self.profile not in GAUGE_PROFILES:
            raise FieldError(
                f"gauge profile {self.profile!r} does not decay at infinity; "
                f"supported: {GAUGE_PROFILES}"
            )
        if self.axis is not None:
            axis = np.asarray(_as_point_tuple(self.axis, "axis"))
            norm = np.linalg.norm(axis)
            if norm == 0:
                raise FieldError("axis must be nonzero")
            object.__setattr__(self, "axis", tuple(float(v) for v in axis / norm))

    @property
    def rho(self) -> float:
        # psi ~ <x>^-1 gives A ~ <x>^-2
        return 2.0 if self.kind == "stream_lorentzian" else RHO_CAP

    @property
    def power(self) -> float | None:
        return 1.0 if self.kind == "stream_lorentzian" else None


@dataclass(frozen=True)
class ElectricTerm:
    """One analytic contribution to the electric potential."""

    kind: str
    center: tuple[float, ...]
    amplitude: float = 1.0
    width: float = 1.0
    exponent: float | None = None

    def __post_init__(self):
        if self.kind not in ELECTRIC_KINDS:
            raise FieldError(f"unknown electric term kind {self.kind!r}")
        object.__setattr__(self, "center", _as_point_tuple(self.center, "center"))
        object.__setattr__(self, "width", _check_width(self.width))
        amp = float(self.amplitude)
        if not np.isfinite(amp):
            raise FieldError("amplitude must be finite")
        object.__setattr__(self, "amplitude", amp)
        if self.kind == "lorentzian_power":
            if self.exponent is None or not float(self.exponent) > 1:
                raise FieldError(
                    f"lorentzian_power needs exponent p > 1, got {self.exponent!r}"
                )
            object.__setattr__(self, "exponent", float(self.exponent))

    @property
    def rho(self) -> float:
        return self.exponent if self.kind == "lorentzian_power" else RHO_CAP

    @property
    def power(self) -> float | None:
        return self.exponent if self.kind == "lorentzian_power" else None


@dataclass
class FieldJet:
    """Values of A, V and requested derivatives at a batch of points.

    Index conventions: ``dA[n, i, j] = d_j A_i``,
    ``d2A[n, i, j, k] = d_j d_k A_i``, ``lapA[n, i] = Laplacian of A_i``.
    """

    A: np.ndarray
    V: np.ndarray
    dA: np.ndarray | None = None
    dV: np.ndarray | None = None
    d2A: np.ndarray | None = None
    lapA: np.ndarray | None = None

    @property
    def divA(self) -> np.ndarray:
        if self.dA is None:
            raise FieldError("divA needs order >= 1")
        return np.einsum("nii->n", self.dA)


# -- radial profile jets -----------------------------------------------------

def _profile_derivs(power: float | None, u: np.ndarray, nmax: int) -> list[np.ndarray]:
    """g, g', ..., g^(nmax) for g(u)=exp(-u/2) (power None) or (1+u)^(-p/2)."""
    if power is None:
        g = np.exp(-0.5 * u)
        return [g * (-0.5) ** n for n in range(nmax + 1)]
    out = []
    coef = 1.0
    base = 1.0 + u
    for n in range(nmax + 1):
        out.append(coef * base ** (-0.5 * power - n))
        coef *= -0.5 * power - n
    return out


def _radial_jet(y, amplitude, width, power, order, want_third=True):
    """Value and derivatives of ``a*g(|y|^2/w^2)``.

    Returns (val, grad, hess, lapgrad, third) where higher entries are None
    unless ``order`` asks for them.  ``order`` counts derivatives of the
    scalar (0..3); ``lapgrad`` is grad(Laplacian), filled when order >= 3.
    """
    c = 1.0 / width**2
    r2 = np.einsum("ni,ni->n", y, y)
    g = _profile_derivs(power, c * r2, order)
    a = amplitude
    val = a * g[0]
    grad = hess = lapgrad = third = None
    d = y.shape[1]
    if order >= 1:
        grad = (2 * a * c * g[1])[:, None] * y
    if order >= 2:
        eye = np.eye(d)
        hess = (4 * a * c**2 * g[2])[:, None, None] * y[:, :, None] * y[:, None, :]
        hess = hess + (2 * a * c * g[1])[:, None, None] * eye
    if order >= 3:
        lapgrad = ((4 * a * c**2 * g[2]) * (d + 2) + 8 * a * c**3 * g[3] * r2)[:, None] * y
    if order >= 3 and want_third:
        t3 = 8 * a * c**3 * g[3]
        t2 = 4 * a * c**2 * g[2]
        third = t3[:, None, None, None] * np.einsum("ni,nj,nk->nijk", y, y, y)
        sym = (
            np.einsum("ij,nk->nijk", eye, y)
            + np.einsum("ik,nj->nijk", eye, y)
            + np.einsum("jk,ni->nijk", eye, y)
        )
        third = third + t2[:, None, None, None] * sym
    return val, grad, hess, lapgrad, third


def _term_linear_map(term: MagneticTerm, d: int) -> np.ndarray:
    """Matrix L with A = L grad(psi) for this term."""
    if term.kind == "gauge_gradient":
        return np.eye(d)
    if d == 2:
        return np.array([[0.0, 1.0], [-1.0, 0.0]])
    e = np.asarray(term.axis if term.axis is not None else (0.0, 0.0, 1.0))
    # (grad psi x e)_i = eps_ijk d_j psi e_k
    eps = np.zeros((3, 3, 3))
    eps[0, 1, 2] = eps[1, 2, 0] = eps[2, 0, 1] = 1.0
    eps[0, 2, 1] = eps[2, 1, 0] = eps[1, 0, 2] = -1.0
    return np.einsum("ijk,k->ij", eps, e)


@dataclass(frozen=True)
class FieldModel:
    """Sum of analytic magnetic and electric terms in dimension 2 or 3."""

    dimension: int
    magnetic_terms: tuple[MagneticTerm, ...] = ()
    electric_terms: tuple[ElectricTerm, ...] = ()
    name: str = field(default="", compare=False)

    def __post_init__(self):
        if self.dimension not in (2, 3):
            raise FieldError(f"dimension must be 2 or 3, got {self.dimension!r}")
        object.__setattr__(self, "magnetic_terms", tuple(self.magnetic_terms))
        object.__setattr__(self, "electric_terms", tuple(self.electric_terms))
        for term in (*self.magnetic_terms, *self.electric_terms):
            if len(term.center) != self.dimension:
                raise FieldError(
                    f"term center {term.center} does not match dimension {self.dimension}"
                )
            if isinstance(term, MagneticTerm) and term.axis is not None:
                if len(term.axis) != 3 or self.dimension != 3:
                    raise FieldError("axis is only meaningful for d=3 stream terms")

    @property
    def rho(self) -> float:
        """Largest decay exponent certified by every term (capped)."""
        terms = (*self.magnetic_terms, *self.electric_terms)
        return min((t.rho for t in terms), default=RHO_CAP)

    @property
    def symbol_order(self) -> float:
        """The exponent m = min(1, rho - 1)."""
        return min(1.0, self.rho - 1.0)

    @property
    def magnetic_is_zero(self) -> bool:
        return all(t.amplitude == 0 for t in self.magnetic_terms)

    @property
    def electric_is_zero(self) -> bool:
        return all(t.amplitude == 0 for t in self.electric_terms)

    @property
    def rotation_invariant(self) -> bool:
        """True when M and X do not depend on the direction (d=2 only).

        Requires every term to be centered at the origin; gauge terms make the
        answer False so that their (numerically nonzero) contribution is kept.
        """
        if self.dimension != 2:
            return False
        for t in self.magnetic_terms:
            if t.kind == "gauge_gradient" or any(t.center):
                return False
        return all(not any(t.center) for t in self.electric_terms)

    def with_terms(self, magnetic=None, electric=None) -> "FieldModel":
        return replace(
            self,
            magnetic_terms=self.magnetic_terms if magnetic is None else tuple(magnetic),
            electric_terms=self.electric_terms if electric is None else tuple(electric),
        )


def zero_model(dimension: int = 2) -> FieldModel:
    return FieldModel(dimension)


def _points(model: FieldModel, x) -> np.ndarray:
    pts = np.asarray(x, dtype=float)
    if pts.ndim == 1:
        pts = pts[None, :]
    if pts.shape[-1] != model.dimension:
        raise FieldError(f"points must have {model.dimension} coordinates")
    if not np.all(np.isfinite(pts)):
        raise FieldError("evaluation points must be finite")
    return pts


def eval_fields(model: FieldModel, x, order: int = 0) -> FieldJet:
    """Evaluate A, V and their derivatives at one point or a batch of points.

    Parameters
    ----------
    model : FieldModel
    x : array_like, shape (d,) or (n, d)
    order : {0, 1, 2}
        0 gives A and V; 1 adds ``dA`` and ``dV``; 2 adds ``d2A`` and ``lapA``.

    Returns
    -------
    FieldJet
        Arrays always carry a leading batch axis.
    """
    if order not in (0, 1, 2):
        raise FieldError(f"order must be 0, 1 or 2, got {order!r}")
    pts = _points(model, x)
    return _eval_points(model, pts, order)


def _eval_points(model: FieldModel, pts: np.ndarray, order: int, full_d2: bool = True) -> FieldJet:
    n, d = pts.shape
    A = np.zeros((n, d))
    V = np.zeros(n)
    dA = np.zeros((n, d, d)) if order >= 1 else None
    dV = np.zeros((n, d)) if order >= 1 else None
    d2A = np.zeros((n, d, d, d)) if order >= 2 and full_d2 else None
    lapA = np.zeros((n, d)) if order >= 2 else None
    for term in model.magnetic_terms:
        if term.amplitude == 0:
            continue
        L = _term_linear_map(term, d)
        y = pts - np.asarray(term.center)
        _, grad, hess, lapgrad, third = _radial_jet(
            y, term.amplitude, term.width, term.power, order + 1, want_third=full_d2
        )
        A += grad @ L.T
        if order >= 1:
            dA += np.einsum("ik,nkj->nij", L, hess)
        if order >= 2:
            lapA += lapgrad @ L.T
            if full_d2:
                d2A += np.einsum("il,nljk->nijk", L, third)
    for term in model.electric_terms:
        if term.amplitude == 0:
            continue
        y = pts - np.asarray(term.center)
        val, grad, *_ = _radial_jet(y, term.amplitude, term.width, term.power, min(order, 1))
        V += val
        if order >= 1:
            dV += grad
    return FieldJet(A=A, V=V, dA=dA, dV=dV, d2A=d2A, lapA=lapA)


def potential_A(model: FieldModel, pts: np.ndarray) -> np.ndarray:
    """Vector potential only, for an (n, d) batch; no validation."""
    return _eval_points(model, pts, 0).A


def potential_V(model: FieldModel, pts: np.ndarray) -> np.ndarray:
    n = pts.shape[0]
    V = np.zeros(n)
    for term in model.electric_terms:
        if term.amplitude == 0:
            continue
        y = pts - np.asarray(term.center)
        V += _radial_jet(y, term.amplitude, term.width, term.power, 0)[0]
    return V


def magnetic_field(model: FieldModel, x) -> np.ndarray:
    """B = d2 A1 - d1 A2 in d=2, shape (n,)."""
    if model.dimension != 2:
        raise FieldError("magnetic_field is defined here for d=2 only")
    jet = eval_fields(model, x, order=1)
    return jet.dA[:, 0, 1] - jet.dA[:, 1, 0]


def _term_flux(term: MagneticTerm, n_radial: int = 64, n_angle: int = 16) -> float:
    """Integral of the term's B over the plane, in polar coordinates about its center.

    Gaussian profiles are integrated over a finite disc; algebraic profiles
    over the whole plane via r = w*tan(u).
    """
    if term.kind == "gauge_gradient" or term.amplitude == 0:
        return 0.0
    model = FieldModel(2, (term,))
    u, wu = np.polynomial.legendre.leggauss(n_radial)
    if term.power is None:
        R = 40.0 * term.width
        r = 0.5 * R * (u + 1)
        wr = 0.5 * R * wu
    else:
        uu = 0.25 * np.pi * (u + 1)  # (0, pi/2)
        r = term.width * np.tan(uu)
        wr = term.width * 0.25 * np.pi * wu / np.cos(uu) ** 2
    alpha = 2 * np.pi * np.arange(n_angle) / n_angle
    rr, aa = np.meshgrid(r, alpha, indexing="ij")
    pts = np.stack([rr * np.cos(aa), rr * np.sin(aa)], axis=-1).reshape(-1, 2)
    pts = pts + np.asarray(term.center)
    B = magnetic_field(model, pts).reshape(rr.shape)
    return float(np.sum(B * rr * wr[:, None]) * 2 * np.pi / n_angle)


def curl_and_flux(model: FieldModel):
    """Magnetic field evaluator and total flux for a planar model.

    Returns
    -------
    B : callable
        ``B(x)`` evaluates ``d2 A1 - d1 A2`` at points of shape (d,) or (n, d).
    flux : float
        Sum of per-term flux integrals.
    """
    if model.dimension != 2:
        raise FieldError("curl_and_flux requires d=2")

    def B(x):
        return magnetic_field(model, x)

    flux = sum(_term_flux(t) for t in model.magnetic_terms)
    return B, flux


def apply_gauge(model: FieldModel, phi_term: MagneticTerm) -> FieldModel:
    """Return the model with A replaced by A + grad(phi).

    ``phi_term`` must be a ``gauge_gradient`` term with a decaying profile.
    A zero-amplitude profile returns the model unchanged.
    """
    if not isinstance(phi_term, MagneticTerm) or phi_term.kind != "gauge_gradient":
        raise FieldError("gauge transformations take a gauge_gradient term")
    if phi_term.profile not in GAUGE_PROFILES:
        raise FieldError(f"gauge profile {phi_term.profile!r} does not decay")
    if len(phi_term.center) != model.dimension:
        raise FieldError("gauge term dimension mismatch")
    if phi_term.amplitude == 0:
        return model
    return model.with_terms(magnetic=(*model.magnetic_terms, phi_term))


def gauge_potential(phi_term: MagneticTerm, x) -> np.ndarray:
    """Value of the scalar gauge function phi at points (n, d)."""
    pts = np.atleast_2d(np.asarray(x, dtype=float))
    y = pts - np.asarray(phi_term.center)
    return _radial_jet(y, phi_term.amplitude, phi_term.width, None, 0)[0]


def stream_function(term: MagneticTerm, x) -> np.ndarray:
    """Scalar profile psi (or phi for gauge terms) of a magnetic term."""
    pts = np.atleast_2d(np.asarray(x, dtype=float))
    y = pts - np.asarray(term.center)
    return _radial_jet(y, term.amplitude, term.width, term.power, 0)[0]


def term_from_mapping(data: dict, magnetic: bool, dimension: int | None = None):
    """Build a term from a plain mapping (config documents, JSON)."""
    data = dict(data)
    center = data.pop("center", None)
    if center is None:
        if dimension is None:
            raise FieldError("term needs a center")
        center = (0.0,) * dimension
    cls = MagneticTerm if magnetic else ElectricTerm
    try:
        return cls(center=tuple(center), **data)
    except TypeError as exc:
        raise FieldError(str(exc)) from None


def term_to_mapping(term) -> dict:
    out = {"kind": term.kind, "center": list(term.center), "amplitude": term.amplitude,
           "width": term.width}
    if isinstance(term, MagneticTerm):
        if term.axis is not None:
            out["axis"] = list(term.axis)
        if term.kind == "gauge_gradient":
            out["profile"] = term.profile
    elif term.exponent is not None:
        out["exponent"] = term.exponent
    return out


def jacobian_fd_check(model: FieldModel, pts: Sequence, rel_step: float = 1e-5) -> float:
    """Largest relative discrepancy between analytic dA and central differences."""
    pts = _points(model, pts)
    widths = [t.width for t in model.magnetic_terms] or [1.0]
    h = rel_step * min(widths)
    jet = _eval_points(model, pts, 1)
    scale = max(np.max(np.abs(jet.dA)), 1e-300)
    worst = 0.0
    for j in range(model.dimension):
        e = np.zeros(model.dimension)
        e[j] = h
        fd = (potential_A(model, pts + e) - potential_A(model, pts - e)) / (2 * h)
        worst = max(worst, float(np.max(np.abs(fd - jet.dA[:, :, j])) / scale))
    return worst
