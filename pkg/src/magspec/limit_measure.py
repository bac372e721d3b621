"""The limiting eigenphase measure and its moments.

For an arc ``iota`` of the unit circle separated from 1,

    mu(iota) = (2 pi)^(1-d) * int_{S^{d-1}} |{xi in Lambda_omega : exp(i M(omega, xi)) in iota}| d omega,

and the monomial moments integrate (e^{iM} - 1)^l1 (e^{-iM} - 1)^l2 over all
lines.  Preimage measures are computed per ray: a 4096-point scan brackets
every crossing of the arc endpoints (shifted by multiples of 2 pi), the
crossings are refined by vectorized bisection, and the indicator is read off
at the midpoint of each resulting segment.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .fields import FieldModel, MagneticTerm
from .quadrature import QuadratureError, QuadratureSpec, build_pieces, integrate_rays, integrate_interval
from .xray import (DEFAULT_QUAD, _term_line_bound, plane_basis, support_radius,
                   xray_M_batch, xray_X_batch)

TWO_PI = 2.0 * math.pi
_OFFSETS = np.array([-8.0, -4.0, -2.0, -1.0, 0.0, 1.0, 2.0, 4.0, 8.0])


class ArcTangencyWarning(UserWarning):
    """An arc endpoint touches a local extremum of the sampled symbol."""


@dataclass(frozen=True)
class Arc:
    """Half-open phase interval [a, b) inside [-pi, pi] that avoids 0."""

    a: float
    b: float

    def __post_init__(self):
        a, b = float(self.a), float(self.b)
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", b)
        if not (math.isfinite(a) and math.isfinite(b)) or not a < b:
            raise ValueError(f"arc needs finite endpoints with a < b, got [{a}, {b})")
        if a < -math.pi or b > math.pi:
            raise ValueError(f"arc [{a}, {b}) leaves [-pi, pi]")
        if self.gap <= 0:
            raise ValueError(f"arc [{a}, {b}) is not separated from phase 0")

    @property
    def gap(self) -> float:
        if self.a < 0 < self.b:
            return 0.0
        return min(abs(self.a), abs(self.b))

    def contains(self, theta) -> np.ndarray:
        theta = np.asarray(theta)
        return (theta >= self.a) & (theta < self.b)

    def conjugate(self) -> "Arc":
        return Arc(-self.b, -self.a)

    def partition(self, n: int) -> list["Arc"]:
        edges = np.linspace(self.a, self.b, n + 1)
        edges[-1] = self.b
        return [Arc(lo, hi) for lo, hi in zip(edges[:-1], edges[1:])]

    def as_tuple(self) -> tuple[float, float]:
        return (self.a, self.b)


def wrap_phase(x) -> np.ndarray:
    """Map real phases to [-pi, pi)."""
    x = np.asarray(x, dtype=float)
    return x - TWO_PI * np.floor((x + math.pi) / TWO_PI)


@dataclass(frozen=True)
class MeasureGrid:
    """Resolution of the direction and impact-plane sampling.

    Parameters
    ----------
    n_omega : int
        Trapezoid nodes on the circle (d=2) or azimuthal nodes (d=3).
    n_polar : int
        Gauss-Legendre nodes in cos(polar angle), d=3 only.
    n_alpha : int
        Angular nodes of the polar grid on each impact plane, d=3 only.
    n_scan : int
        Scan points per ray used to bracket crossings.
    radius : float or None
        Override for the impact-plane truncation radius.
    collapse_symmetric : bool
        Use a single direction for rotation-invariant planar models.
    """

    n_omega: int = 64
    n_polar: int = 8
    n_alpha: int = 16
    n_scan: int = 4096
    radius: float | None = None
    collapse_symmetric: bool = True
    n_bisect: int = 48
    tangency_tol: float = 1e-6

    def __post_init__(self):
        for name in ("n_omega", "n_polar", "n_alpha", "n_scan", "n_bisect"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name} must be positive")
        if self.n_scan < 3:
            raise ValueError("n_scan must be at least 3")
        if self.radius is not None and not self.radius > 0:
            raise ValueError("radius must be positive")

    def as_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


DEFAULT_GRID = MeasureGrid()


# -- ray families -----------------------------------------------------------------

@dataclass
class _Rays:
    """Rays r -> r * e_i in the impact plane of omega_i, weighted by w_i.

    In d=2 the rays are full lines (r in [-R, R]); in d=3 they are half lines
    of a polar grid and the radial measure carries the factor r.
    """

    omegas: np.ndarray
    dirs: np.ndarray
    weights: np.ndarray
    dimension: int

    @property
    def n(self) -> int:
        return self.omegas.shape[0]

    def points(self, idx, r) -> tuple[np.ndarray, np.ndarray]:
        return self.omegas[idx], r[:, None] * self.dirs[idx]


def _ray_family(model: FieldModel, grid: MeasureGrid) -> _Rays:
    """Direction/impact rays with weights that already include (2 pi)^(1-d)."""
    d = model.dimension
    if d == 2:
        if grid.collapse_symmetric and model.rotation_invariant:
            th = np.zeros(1)
            w = np.array([TWO_PI])
        else:
            th = TWO_PI * np.arange(grid.n_omega) / grid.n_omega
            w = np.full(th.size, TWO_PI / grid.n_omega)
        om = np.stack([np.cos(th), np.sin(th)], axis=1)
        perp = np.stack([-np.sin(th), np.cos(th)], axis=1)
        return _Rays(om, perp, w / TWO_PI, 2)
    z, wz = np.polynomial.legendre.leggauss(grid.n_polar)
    az = TWO_PI * np.arange(grid.n_omega) / grid.n_omega
    alpha = TWO_PI * np.arange(grid.n_alpha) / grid.n_alpha
    oms, dirs, ws = [], [], []
    for zi, wzi in zip(z, wz):
        rho = math.sqrt(max(0.0, 1 - zi * zi))
        for phi in az:
            om = np.array([rho * math.cos(phi), rho * math.sin(phi), zi])
            e1, e2 = plane_basis(om)
            for al in alpha:
                oms.append(om)
                dirs.append(math.cos(al) * e1 + math.sin(al) * e2)
                ws.append(wzi * (TWO_PI / grid.n_omega) * (TWO_PI / grid.n_alpha))
    return _Rays(np.array(oms), np.array(dirs), np.array(ws) / TWO_PI**2, 3)


def _symbol_fn(model: FieldModel, rays: _Rays, which: str, quad: QuadratureSpec):
    fn = xray_M_batch if which == "M" else xray_X_batch

    def evaluate(idx, r):
        om, pts = rays.points(idx, r)
        return fn(model, om, pts, quad)

    return evaluate


def _segments(evaluate, n_rays, r_lo, r_hi, levels, grid: MeasureGrid, label: str):
    """Split each ray at every crossing of ``levels``; returns per-segment data.

    Returns (ray index, left end, right end, midpoint value) arrays.
    """
    r = np.linspace(r_lo, r_hi, grid.n_scan)
    idx = np.repeat(np.arange(n_rays), grid.n_scan)
    F = evaluate(idx, np.tile(r, n_rays)).reshape(n_rays, grid.n_scan)
    lv = np.asarray(levels, dtype=float)
    lv = lv[(lv >= F.min() - 1.0) & (lv <= F.max() + 1.0)] if F.size else lv
    _check_tangency(F, lv, grid.tangency_tol, label)
    b_ray, b_lo, b_hi, b_lvl, b_pos = [], [], [], [], []
    for level in lv:
        pos = F >= level
        ray_i, s_i = np.nonzero(pos[:, :-1] != pos[:, 1:])
        b_ray.append(ray_i)
        b_lo.append(r[s_i])
        b_hi.append(r[s_i + 1])
        b_lvl.append(np.full(ray_i.size, level))
        b_pos.append(pos[ray_i, s_i])
    ray_b = np.concatenate(b_ray) if b_ray else np.zeros(0, int)
    lo = np.concatenate(b_lo) if b_lo else np.zeros(0)
    hi = np.concatenate(b_hi) if b_hi else np.zeros(0)
    if ray_b.size:
        lvl = np.concatenate(b_lvl)
        pos_lo = np.concatenate(b_pos)
        for _ in range(grid.n_bisect):
            mid = 0.5 * (lo + hi)
            same = (evaluate(ray_b, mid) >= lvl) == pos_lo
            lo = np.where(same, mid, lo)
            hi = np.where(same, hi, mid)
            if np.max(hi - lo) <= 1e-14 * max(1.0, abs(r_lo), abs(r_hi)):
                break
    roots = 0.5 * (lo + hi)
    # segment boundaries per ray
    order = np.lexsort((roots, ray_b))
    ray_b, roots = ray_b[order], roots[order]
    seg_ray, seg_l, seg_r = [], [], []
    starts = np.searchsorted(ray_b, np.arange(n_rays + 1))
    for i in range(n_rays):
        pts = np.concatenate([[r_lo], roots[starts[i]:starts[i + 1]], [r_hi]])
        seg_ray.append(np.full(pts.size - 1, i))
        seg_l.append(pts[:-1])
        seg_r.append(pts[1:])
    seg_ray = np.concatenate(seg_ray)
    seg_l = np.concatenate(seg_l)
    seg_r = np.concatenate(seg_r)
    keep = seg_r > seg_l
    seg_ray, seg_l, seg_r = seg_ray[keep], seg_l[keep], seg_r[keep]
    mid_vals = evaluate(seg_ray, 0.5 * (seg_l + seg_r))
    return seg_ray, seg_l, seg_r, mid_vals


def _check_tangency(F, levels, tol, label):
    if F.shape[1] < 3 or levels.size == 0:
        return
    inner = F[:, 1:-1]
    ext = ((inner >= F[:, :-2]) & (inner >= F[:, 2:])) | ((inner <= F[:, :-2]) & (inner <= F[:, 2:]))
    vals = inner[ext]
    if vals.size == 0:
        return
    gap = np.min(np.abs(vals[:, None] - levels[None, :]))
    if gap < tol:
        warnings.warn(
            f"{label}: a level is within {gap:.2e} of a sampled extremum; "
            "the preimage measure may be ill-conditioned",
            ArcTangencyWarning,
            stacklevel=3,
        )


def _radial_length(lo, hi, dimension):
    if dimension == 2:
        return hi - lo
    return 0.5 * (hi * hi - lo * lo)


def _radius(model: FieldModel, eps: float, which: str, grid: MeasureGrid) -> float:
    if grid.radius is not None:
        return float(grid.radius)
    R = support_radius(model, eps, which)
    if not math.isfinite(R):
        raise ValueError("symbol decays too slowly to truncate the impact plane; set grid.radius")
    return R


def mu_arcs(model: FieldModel, arcs, grid: MeasureGrid = DEFAULT_GRID,
            quad: QuadratureSpec = DEFAULT_QUAD) -> np.ndarray:
    """Masses of several arcs computed from one shared scan."""
    arcs = [a if isinstance(a, Arc) else Arc(*a) for a in arcs]
    if not arcs:
        return np.zeros(0)
    if model.magnetic_is_zero:
        return np.zeros(len(arcs))
    gap = min(a.gap for a in arcs)
    R = _radius(model, 0.5 * gap, "M", grid)
    if R == 0.0:
        return np.zeros(len(arcs))
    rays = _ray_family(model, grid)
    evaluate = _symbol_fn(model, rays, "M", quad)
    r_lo = -R if model.dimension == 2 else 0.0
    # crude bound on |M| decides how many 2 pi shifts can matter
    jmax = int(math.ceil((_m_sup_bound(model) + math.pi) / TWO_PI))
    ends = sorted({e for a in arcs for e in a.as_tuple()})
    levels = [e + TWO_PI * j for e in ends for j in range(-jmax, jmax + 1)]
    ray, lo, hi, mid = _segments(evaluate, rays.n, r_lo, R, levels, grid, "mu_arc")
    lengths = _radial_length(lo, hi, model.dimension) * rays.weights[ray]
    phase = wrap_phase(mid)
    return np.array([float(np.sum(lengths[a.contains(phase)])) for a in arcs])


def _m_sup_bound(model: FieldModel) -> float:
    # bounds sup|M|; the scan sees the actual range, this only sizes the 2 pi shifts
    total = 0.0
    for t in model.magnetic_terms:
        if isinstance(t, MagneticTerm) and t.kind != "gauge_gradient":
            total += float(_term_line_bound(t, np.array(0.0)))
    return total


def mu_arc(model: FieldModel, arc: Arc, grid: MeasureGrid = DEFAULT_GRID,
           quad: QuadratureSpec = DEFAULT_QUAD) -> float:
    """Mass of the limiting measure on a half-open arc."""
    return float(mu_arcs(model, [arc], grid, quad)[0])


def mu_tilde_intervals(model: FieldModel, intervals, grid: MeasureGrid = DEFAULT_GRID,
                       quad: QuadratureSpec = DEFAULT_QUAD) -> np.ndarray:
    """Masses of the rescaled measure (pushforward under X) for several intervals."""
    if not model.magnetic_is_zero:
        raise ValueError("the rescaled measure is defined only for models with A = 0")
    ivs = []
    for iv in intervals:
        lo, hi = (float(v) for v in (iv.as_tuple() if isinstance(iv, Arc) else iv))
        if not lo < hi:
            raise ValueError(f"interval needs lo < hi, got [{lo}, {hi})")
        if lo <= 0 <= hi:
            raise ValueError(f"interval [{lo}, {hi}) is not separated from 0")
        ivs.append((lo, hi))
    if model.electric_is_zero or not ivs:
        return np.zeros(len(ivs))
    gap = min(min(abs(lo), abs(hi)) for lo, hi in ivs)
    R = _radius(model, 0.5 * gap, "X", grid)
    rays = _ray_family(model, grid)
    evaluate = _symbol_fn(model, rays, "X", quad)
    r_lo = -R if model.dimension == 2 else 0.0
    levels = sorted({e for iv in ivs for e in iv})
    ray, lo, hi, mid = _segments(evaluate, rays.n, r_lo, R, levels, grid, "mu_tilde")
    lengths = _radial_length(lo, hi, model.dimension) * rays.weights[ray]
    return np.array([float(np.sum(lengths[(mid >= a) & (mid < b)])) for a, b in ivs])


def mu_tilde_interval(model: FieldModel, delta, grid: MeasureGrid = DEFAULT_GRID,
                      quad: QuadratureSpec = DEFAULT_QUAD) -> float:
    """Rescaled measure of the interval ``delta`` = (lo, hi), half-open."""
    return float(mu_tilde_intervals(model, [delta], grid, quad)[0])


# -- moments ---------------------------------------------------------------------------

def moment_exponent(model: FieldModel) -> float:
    """m = min(1, rho - 1)."""
    return min(1.0, model.rho - 1.0)


def moment_certified(model: FieldModel, l1: int, l2: int) -> bool:
    """Whether l1 + l2 exceeds the integrability threshold (d - 1) / m."""
    return l1 + l2 > (model.dimension - 1) / moment_exponent(model)


@dataclass
class MomentEstimate:
    value: complex
    error: float
    certified: bool
    note: str = ""


def _moment_layout(model: FieldModel, rays: _Rays, quad: QuadratureSpec):
    terms = [t for t in model.magnetic_terms if t.amplitude != 0]
    bps, scales = [], []
    for t in terms:
        c = np.asarray(t.center, dtype=float)
        rc = rays.dirs @ c
        w = t.width + (np.linalg.norm(c) if t.power is not None else 0.0)
        bps.append(rc[:, None] + w * _OFFSETS)
        scales.append(np.full(rays.n, quad.tail_factor * (t.width + np.linalg.norm(c))))
    return np.concatenate(bps, axis=1), np.max(np.stack(scales), axis=0)


def mu_moment_estimate(model: FieldModel, l1: int, l2: int, grid: MeasureGrid = DEFAULT_GRID,
                       quad: QuadratureSpec = QuadratureSpec(abs_tol=1e-10, rel_tol=1e-10)
                       ) -> MomentEstimate:
    """Moment of the limiting measure with error estimate and certification flag."""
    l1, l2 = int(l1), int(l2)
    if l1 < 0 or l2 < 0:
        raise ValueError("moment indices must be nonnegative")
    certified = moment_certified(model, l1, l2)
    note = "" if certified else "l1 + l2 below the integrability threshold; value not certified"
    if l1 + l2 == 0:
        raise ValueError("the (0, 0) moment is the total mass, which is infinite")
    if model.magnetic_is_zero:
        return MomentEstimate(0j, 0.0, certified, note)
    rays = _ray_family(model, grid)
    inner = QuadratureSpec(abs_tol=quad.abs_tol * 1e-2, rel_tol=quad.rel_tol * 1e-2)

    def integrand(p, _d):
        idx = np.rint(p[:, 0]).astype(int)
        r = p[:, 1]
        om, pts = rays.points(idx, r)
        M = xray_M_batch(model, om, pts, inner)
        z = np.exp(1j * M)
        val = (z - 1.0) ** l1 * (np.conj(z) - 1.0) ** l2
        if model.dimension == 3:
            val = val * r
        return val

    bp, scale = _moment_layout(model, rays, quad)
    half = model.dimension == 3
    pieces = build_pieces(bp, scale, half)
    bases = np.stack([np.arange(rays.n, dtype=float), np.zeros(rays.n)], axis=1)
    dirs = np.tile([0.0, 1.0], (rays.n, 1))
    try:
        vals, errs = integrate_rays(integrand, bases, dirs, pieces, quad, return_errors=True)
    except QuadratureError as exc:
        if certified:
            raise
        return MomentEstimate(complex("nan"), math.inf, False, f"{note}; {exc}")
    value = complex(np.sum(rays.weights * vals[:, 0]))
    error = float(np.sum(rays.weights * errs))
    return MomentEstimate(value, error, certified, note)


def mu_moment(model: FieldModel, l1: int, l2: int, grid: MeasureGrid = DEFAULT_GRID,
              quad: QuadratureSpec = QuadratureSpec(abs_tol=1e-10, rel_tol=1e-10)) -> complex:
    """(2 pi)^(1-d) int int (e^{iM}-1)^l1 (e^{-iM}-1)^l2 d xi d omega."""
    return mu_moment_estimate(model, l1, l2, grid, quad).value


# -- tails ----------------------------------------------------------------------------

@dataclass
class TailReport:
    """Partial integrals of |e^{iM} - 1|^l over |xi| <= R."""

    l: int
    radii: np.ndarray
    partials: np.ndarray
    increments: np.ndarray
    tail_exponent: float | None
    predicted_convergent: bool
    observed_convergent: bool

    def as_dict(self) -> dict:
        return {
            "l": self.l,
            "radii": self.radii.tolist(),
            "partials": self.partials.tolist(),
            "tail_exponent": self.tail_exponent,
            "predicted_convergent": self.predicted_convergent,
            "observed_convergent": self.observed_convergent,
        }


def tail_moment_check(model: FieldModel, l: int, radii=(1.0, 10.0, 100.0, 1e3, 1e4),
                      grid: MeasureGrid = MeasureGrid(n_omega=16),
                      quad: QuadratureSpec = QuadratureSpec(abs_tol=1e-12, rel_tol=1e-10)
                      ) -> TailReport:
    """Partial integrals of the even moment |z - 1|^l over growing impact discs (d = 2).

    Increments over the annuli R_j < |xi| <= R_{j+1} are fitted against R on
    a log-log scale; a negative fitted exponent means the shells shrink.
    """
    if l % 2 or l <= 0:
        raise ValueError("l must be a positive even integer")
    if model.dimension != 2:
        raise ValueError("tail_moment_check supports d = 2")
    radii = np.asarray(sorted(radii), dtype=float)
    predicted = l > (model.dimension - 1) / (model.rho - 1)
    if model.magnetic_is_zero:
        z = np.zeros(radii.size)
        return TailReport(l, radii, z, z.copy(), None, predicted, True)
    rays = _ray_family(model, grid)
    half = l // 2

    def shell(i, a, b):
        om = rays.omegas[i]
        perp = rays.dirs[i]

        def f(s):
            M = xray_M_batch(model, np.broadcast_to(om, (s.size, 2)), s[:, None] * perp, quad)
            return (2.0 * np.sin(0.5 * M)) ** (2 * half)

        bps = np.geomspace(max(a, 1e-3), b, 12) if a > 0 else np.linspace(a, b, 9)
        return (integrate_interval(f, a, b, quad, breakpoints=bps)
                + integrate_interval(f, -b, -a, quad, breakpoints=-bps[::-1]))

    edges = np.concatenate([[0.0], radii])
    incs = np.zeros(radii.size)
    for j in range(radii.size):
        incs[j] = sum(rays.weights[i] * float(np.real(shell(i, edges[j], edges[j + 1])))
                      for i in range(rays.n))
    partials = np.cumsum(incs)
    exponent = None
    # shells widen geometrically, so increment ~ R^(p+1) for an R^p integrand
    good = incs[1:] > 0
    if np.count_nonzero(good) >= 2:
        slope = np.polyfit(np.log(radii[1:][good]), np.log(incs[1:][good]), 1)[0]
        exponent = float(slope)
    observed = exponent is None or exponent < 0
    return TailReport(l, radii, partials, incs, exponent, predicted, observed)


# -- report ----------------------------------------------------------------------------

@dataclass
class MeasureReport:
    """Arc masses and moments of the limiting measure for one model."""

    dimension: int
    arcs: list = field(default_factory=list)
    masses: list = field(default_factory=list)
    moments: dict = field(default_factory=dict)
    certified: dict = field(default_factory=dict)
    grid: dict = field(default_factory=dict)
    tolerances: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        return {
            "dimension": self.dimension,
            "arcs": [{"a": a.a, "b": a.b, "mass": m} for a, m in zip(self.arcs, self.masses)],
            "moments": [
                {"l1": l1, "l2": l2, "re": v.real, "im": v.imag,
                 "certified": self.certified.get((l1, l2), False)}
                for (l1, l2), v in sorted(self.moments.items())
            ],
            "grid": self.grid,
            "tolerances": self.tolerances,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "MeasureReport":
        arcs = [Arc(e["a"], e["b"]) for e in data.get("arcs", [])]
        masses = [float(e["mass"]) for e in data.get("arcs", [])]
        moments, cert = {}, {}
        for e in data.get("moments", []):
            key = (int(e["l1"]), int(e["l2"]))
            moments[key] = complex(e["re"], e["im"])
            cert[key] = bool(e["certified"])
        return cls(int(data["dimension"]), arcs, masses, moments, cert,
                   dict(data.get("grid", {})), dict(data.get("tolerances", {})))


def measure_report(model: FieldModel, arcs=(), moments=(), grid: MeasureGrid = DEFAULT_GRID,
                   quad: QuadratureSpec = DEFAULT_QUAD) -> MeasureReport:
    """Compute arc masses and moments into one report."""
    arcs = [a if isinstance(a, Arc) else Arc(*a) for a in arcs]
    masses = [float(m) for m in mu_arcs(model, arcs, grid, quad)] if arcs else []
    mom, cert = {}, {}
    for l1, l2 in moments:
        est = mu_moment_estimate(model, l1, l2, grid)
        mom[(int(l1), int(l2))] = est.value
        cert[(int(l1), int(l2))] = est.certified
    return MeasureReport(model.dimension, arcs, masses, mom, cert, grid.as_dict(),
                         {"abs_tol": quad.abs_tol, "rel_tol": quad.rel_tol})
