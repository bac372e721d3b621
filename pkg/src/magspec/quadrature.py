"""Gauss-Kronrod quadrature for integrals along many rays at once.

The domain of every ray integral is split into *pieces*: finite intervals in
the ray parameter ``t`` and (semi-)infinite tails mapped to ``u in [0, pi/2)``
through ``t = t0 +/- W tan(u)``.  All rays are first integrated with one
G7/K15 panel per piece in a single vectorized pass.  Rays whose error
estimate misses the tolerance get a few vectorized passes of uniform piece
subdivision, and any stragglers are refined one at a time by global
adaptive bisection.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

# 15-point Kronrod nodes on [-1, 1] (QUADPACK qk15); odd indices are the G7 nodes.
_XGK = np.array([
    0.991455371120812639206854697526329,
    0.949107912342758524526189684047851,
    0.864864423359769072789712788640926,
    0.741531185599394439863864773280788,
    0.586087235467691130294144845693013,
    0.405845151377397166906606412076961,
    0.207784955007898467600689403773245,
    0.000000000000000000000000000000000,
])
_WGK = np.array([
    0.022935322010529224963732008058970,
    0.063092092629978553290700663189204,
    0.104790010322250183839876322541518,
    0.140653259715525918745189590510238,
    0.169004726639267902826583426598550,
    0.190350578064785409913256402421014,
    0.204432940075298892414161999234649,
    0.209482141084727828012999174891714,
])
_WG = np.array([
    0.129484966168869693270611432679082,
    0.279705391489276667901467771423780,
    0.381830050505118944950369775488975,
    0.417959183673469387755102040816327,
])

NODES = np.concatenate([-_XGK[:-1], _XGK[::-1]])
KRONROD_WEIGHTS = np.concatenate([_WGK[:-1], _WGK[::-1]])
GAUSS_WEIGHTS = np.zeros(15)
GAUSS_WEIGHTS[1:7:2] = _WG[:3]
GAUSS_WEIGHTS[7] = _WG[3]
GAUSS_WEIGHTS[9:15:2] = _WG[2::-1]

_EPS = np.finfo(float).eps
_TINY = np.finfo(float).tiny
_REFINE_LEVELS = (2, 4, 8)

FINITE, RIGHT_TAIL, LEFT_TAIL = 0, 1, -1


class QuadratureError(RuntimeError):
    """Adaptive refinement exhausted its evaluation budget."""


@dataclass(frozen=True)
class QuadratureSpec:
    """Tolerances and budget for one integral."""

    abs_tol: float = 1e-11
    rel_tol: float = 1e-11
    max_evals: int = 1_000_000
    tail_factor: float = 8.0

    def __post_init__(self):
        if not (self.abs_tol > 0 and self.rel_tol > 0):
            raise ValueError("quadrature tolerances must be positive")
        if self.max_evals < 15:
            raise ValueError("max_evals must allow at least one panel")

    def target(self, value) -> float:
        return max(self.abs_tol, self.rel_tol * float(np.max(np.abs(value), initial=0.0)))


def _map(kind, t0, scale, u):
    """Ray parameter and Jacobian for mapped coordinate u (broadcasting)."""
    finite = kind == FINITE
    cu = np.cos(np.where(finite, 0.0, u))
    t = np.where(finite, u, t0 + kind * scale * np.tan(np.where(finite, 0.0, u)))
    jac = np.where(finite, 1.0, scale / cu**2)
    return t, jac


def _kronrod_panel(fvals, half):
    """Kronrod value and QUADPACK error estimate.

    fvals has shape (..., 15, m); half has shape (...). Returns value
    (..., m) and a scalar error per panel (max over components).
    """
    h = half[..., None]
    resk = np.einsum("j,...jm->...m", KRONROD_WEIGHTS, fvals)
    resg = np.einsum("j,...jm->...m", GAUSS_WEIGHTS, fvals)
    mean = 0.5 * resk
    resasc = np.einsum("j,...jm->...m", KRONROD_WEIGHTS, np.abs(fvals - mean[..., None, :]))
    resabs = np.einsum("j,...jm->...m", KRONROD_WEIGHTS, np.abs(fvals))
    err = np.abs((resk - resg) * h)
    resasc = resasc * np.abs(h)
    resabs = resabs * np.abs(h)
    with np.errstate(divide="ignore", invalid="ignore"):
        scaled = resasc * np.minimum(1.0, (200.0 * err / resasc) ** 1.5)
    err = np.where((resasc != 0) & (err != 0), scaled, err)
    err = np.where(resabs > _TINY / (50 * _EPS), np.maximum(50 * _EPS * resabs, err), err)
    return resk * h, np.max(err, axis=-1)


def _eval_panels(func, base, direction, kind, t0, scale, ua, ub):
    """Integrate over panels [ua, ub] in mapped coordinates.

    All piece arrays share a leading shape S; base/direction have shape S+(d,).
    func(points (n, d), dirs (n, d)) -> (n, m) real or complex.
    """
    half = 0.5 * (ub - ua)
    mid = 0.5 * (ub + ua)
    u = mid[..., None] + half[..., None] * NODES
    t, jac = _map(kind[..., None], t0[..., None], scale[..., None], u)
    pts = base[..., None, :] + t[..., None] * direction[..., None, :]
    d = base.shape[-1]
    dirs = np.broadcast_to(direction[..., None, :], pts.shape)
    vals = func(pts.reshape(-1, d), dirs.reshape(-1, d))
    vals = np.asarray(vals)
    if vals.ndim == 1:
        vals = vals[:, None]
    vals = vals.reshape(*u.shape, -1) * jac[..., None]
    return _kronrod_panel(vals, half)


@dataclass
class RayPieces:
    """Piece layout for a batch of rays, arrays of shape (L, P)."""

    kind: np.ndarray
    t0: np.ndarray
    scale: np.ndarray
    ua: np.ndarray
    ub: np.ndarray

    @property
    def n_pieces(self) -> int:
        return self.kind.shape[1]


def build_pieces(breakpoints: np.ndarray, tail_scale: np.ndarray, half_line: bool) -> RayPieces:
    """Pieces from sorted breakpoints.

    Parameters
    ----------
    breakpoints : (L, B) array
        Interior break points in t; for half lines they are clipped to t >= 0
        and 0 is added.
    tail_scale : (L,) array
        Scale W of the tan map on the infinite tails.
    half_line : bool
        Integrate over [0, inf) instead of the whole line.
    """
    bp = np.asarray(breakpoints, dtype=float)
    L = bp.shape[0]
    if half_line:
        bp = np.concatenate([np.zeros((L, 1)), np.maximum(bp, 0.0)], axis=1)
    bp = np.sort(bp, axis=1)
    nfin = bp.shape[1] - 1
    kinds, t0s, ua, ub = [], [], [], []
    if not half_line:
        kinds.append(np.full((L, 1), LEFT_TAIL))
        t0s.append(bp[:, :1])
        ua.append(np.zeros((L, 1)))
        ub.append(np.full((L, 1), 0.5 * np.pi))
    if nfin > 0:
        kinds.append(np.full((L, nfin), FINITE))
        t0s.append(np.zeros((L, nfin)))
        ua.append(bp[:, :-1])
        ub.append(bp[:, 1:])
    kinds.append(np.full((L, 1), RIGHT_TAIL))
    t0s.append(bp[:, -1:])
    ua.append(np.zeros((L, 1)))
    ub.append(np.full((L, 1), 0.5 * np.pi))
    kind = np.concatenate(kinds, axis=1)
    scale = np.broadcast_to(np.asarray(tail_scale, dtype=float)[:, None], kind.shape).copy()
    return RayPieces(kind, np.concatenate(t0s, axis=1), scale,
                     np.concatenate(ua, axis=1), np.concatenate(ub, axis=1))


def _adaptive_single(func, base, direction, pieces: RayPieces, row: int, quad: QuadratureSpec):
    """Global adaptive bisection for one ray."""
    kind = pieces.kind[row].copy()
    t0 = pieces.t0[row].copy()
    scale = pieces.scale[row].copy()
    ua = pieces.ua[row].copy()
    ub = pieces.ub[row].copy()
    keep = ub > ua
    kind, t0, scale, ua, ub = kind[keep], t0[keep], scale[keep], ua[keep], ub[keep]
    b = np.broadcast_to(base, (kind.size, base.size))
    dvec = np.broadcast_to(direction, (kind.size, direction.size))
    vals, errs = _eval_panels(func, b, dvec, kind, t0, scale, ua, ub)
    evals = 15 * kind.size
    while True:
        total = vals.sum(axis=0)
        target = quad.target(total)
        err_total = errs.sum()
        if err_total <= target:
            return total, err_total
        if evals >= quad.max_evals:
            raise QuadratureError(
                f"quadrature budget of {quad.max_evals} evaluations exhausted "
                f"(error estimate {err_total:.3e}, target {target:.3e})"
            )
        # bisect every panel above its fair share, largest first
        order = np.argsort(errs)[::-1]
        share = target / max(errs.size, 1)
        chosen = order[errs[order] > share][:256]
        if chosen.size == 0:
            chosen = order[:1]
        budget_left = (quad.max_evals - evals) // 30
        chosen = chosen[: max(budget_left, 1)]
        mids = 0.5 * (ua[chosen] + ub[chosen])
        if np.any((mids <= ua[chosen]) | (mids >= ub[chosen])):
            raise QuadratureError("adaptive bisection reached machine resolution")
        ck = np.concatenate([kind[chosen], kind[chosen]])
        ct = np.concatenate([t0[chosen], t0[chosen]])
        cs = np.concatenate([scale[chosen], scale[chosen]])
        ca = np.concatenate([ua[chosen], mids])
        cb = np.concatenate([mids, ub[chosen]])
        nb = np.broadcast_to(base, (ck.size, base.size))
        nd = np.broadcast_to(direction, (ck.size, direction.size))
        cv, ce = _eval_panels(func, nb, nd, ck, ct, cs, ca, cb)
        evals += 15 * ck.size
        mask = np.ones(kind.size, bool)
        mask[chosen] = False
        kind = np.concatenate([kind[mask], ck])
        t0 = np.concatenate([t0[mask], ct])
        scale = np.concatenate([scale[mask], cs])
        ua = np.concatenate([ua[mask], ca])
        ub = np.concatenate([ub[mask], cb])
        vals = np.concatenate([vals[mask], cv])
        errs = np.concatenate([errs[mask], ce])


def integrate_rays(
    func: Callable[[np.ndarray, np.ndarray], np.ndarray],
    bases: np.ndarray,
    directions: np.ndarray,
    pieces: RayPieces,
    quad: QuadratureSpec,
    chunk_points: int = 2_000_000,
    return_errors: bool = False,
):
    """Integrate ``func`` along rays ``base + t*direction`` for a batch of rays.

    Parameters
    ----------
    func : callable
        ``func(points, dirs)`` with arrays of shape (n, d) returning (n,) or
        (n, m) values, real or complex.
    bases, directions : (L, d) arrays
    pieces : RayPieces
        Domain layout from :func:`build_pieces`.
    quad : QuadratureSpec

    Returns
    -------
    values : (L, m) array
    errors : (L,) array, only when ``return_errors``
    """
    bases = np.asarray(bases, dtype=float)
    directions = np.asarray(directions, dtype=float)
    L, P = pieces.kind.shape
    per_ray = 15 * P
    step = max(1, chunk_points // per_ray)
    out_vals, out_errs = [], []
    for lo in range(0, L, step):
        sl = slice(lo, lo + step)
        b = np.broadcast_to(bases[sl, None, :], (bases[sl].shape[0], P, bases.shape[1]))
        dv = np.broadcast_to(directions[sl, None, :], b.shape)
        v, e = _eval_panels(func, b, dv, pieces.kind[sl], pieces.t0[sl], pieces.scale[sl],
                            pieces.ua[sl], pieces.ub[sl])
        out_vals.append(v.sum(axis=1))
        out_errs.append(e.sum(axis=1))
    values = np.concatenate(out_vals, axis=0)
    errors = np.concatenate(out_errs, axis=0)

    def failing():
        targets = np.maximum(quad.abs_tol, quad.rel_tol * np.max(np.abs(values), axis=1))
        return np.flatnonzero(errors > targets)

    # vectorized uniform refinement of the rays that missed the tolerance
    for nsub in _REFINE_LEVELS:
        rows = failing()
        if rows.size == 0:
            break
        frac = np.arange(nsub + 1) / nsub
        ua, ub = pieces.ua[rows], pieces.ub[rows]
        edges = ua[..., None] + (ub - ua)[..., None] * frac
        sub_a = edges[..., :-1].reshape(rows.size, -1)
        sub_b = edges[..., 1:].reshape(rows.size, -1)
        rep = lambda arr: np.repeat(arr[rows], nsub, axis=1)
        step = max(1, chunk_points // (15 * P * nsub))
        for lo in range(0, rows.size, step):
            r = rows[lo:lo + step]
            sl = slice(lo, lo + step)
            b = np.broadcast_to(bases[r, None, :], (r.size, P * nsub, bases.shape[1]))
            dv = np.broadcast_to(directions[r, None, :], b.shape)
            v, e = _eval_panels(func, b, dv, rep(pieces.kind)[sl], rep(pieces.t0)[sl],
                                rep(pieces.scale)[sl], sub_a[sl], sub_b[sl])
            values[r] = v.sum(axis=1)
            errors[r] = e.sum(axis=1)
    for row in failing():
        values[row], errors[row] = _adaptive_single(
            func, bases[row], directions[row], pieces, row, quad
        )
    if return_errors:
        return values, errors
    return values


def integrate_interval(
    func: Callable[[np.ndarray], np.ndarray],
    a: float,
    b: float,
    quad: QuadratureSpec,
    breakpoints=(),
    tail_scale: float = 1.0,
):
    """Adaptive integral of a vectorized scalar/vector function of one variable.

    ``a`` and ``b`` may be infinite; infinite ends are handled by the tan map.
    Returns a float (or complex) for scalar integrands and an array otherwise.
    """
    scalar = np.ndim(func(np.array([0.5 * (a + b) if np.isfinite(a + b) else 0.0]))) == 1
    if a == b:
        return 0.0 if scalar else np.zeros(np.asarray(func(np.array([a]))).shape[1:])
    sign = 1.0
    if a > b:
        a, b, sign = b, a, -1.0
    inner = [p for p in sorted(breakpoints) if a < p < b]
    lo = a if np.isfinite(a) else (inner[0] if inner else (0.0 if not np.isfinite(b) else b))
    hi = b if np.isfinite(b) else (inner[-1] if inner else max(lo, 0.0 if not np.isfinite(a) else lo))
    pts = sorted({lo, hi, *inner})
    kinds, t0s, ua, ub = [], [], [], []
    if not np.isfinite(a):
        kinds.append(LEFT_TAIL); t0s.append(pts[0]); ua.append(0.0); ub.append(0.5 * np.pi)
    for p, q in zip(pts[:-1], pts[1:]):
        kinds.append(FINITE); t0s.append(0.0); ua.append(p); ub.append(q)
    if not np.isfinite(b):
        kinds.append(RIGHT_TAIL); t0s.append(pts[-1]); ua.append(0.0); ub.append(0.5 * np.pi)
    pieces = RayPieces(
        np.array([kinds]), np.array([t0s], float),
        np.full((1, len(kinds)), float(tail_scale)),
        np.array([ua], float), np.array([ub], float),
    )

    def wrapped(points, _dirs):
        return func(points[:, 0])

    val, _ = _adaptive_single(wrapped, np.zeros(1), np.ones(1), pieces, 0, quad)
    return sign * val[0] if scalar else sign * val
