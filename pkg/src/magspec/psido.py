"""Nystrom discretization of semiclassical pseudodifferential operators on the circle.

For a symbol sigma(theta, s) on lines with direction omega(theta) and offset
s*omega_perp(theta), the kernel of Op_{1/k}[sigma] on the circle is

    K(theta, theta') = (k / 2 pi) * sigma_hat(theta, k sin(theta - theta')),
    sigma_hat(theta, eta) = int exp(-i s eta) sigma(theta, s) ds,

because <omega - omega', s omega_perp> = s sin(theta - theta').  The matrix
entry (j, l) multiplies K by a smooth near-diagonal cutoff and the
trapezoid weight 2 pi / N.

All Fourier sums for one matrix are done as a single real matrix product:
eta depends only on the index difference q = j - l, and
eta_q = eta_{N/2 - q} = -eta_{q - N/2}, so N/4 + 1 frequencies suffice.
"""
from __future__ import annotations

import hashlib
import json
import logging
import math
import struct
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.sparse.linalg import svds

from .fields import FieldModel, term_to_mapping
from .quadrature import QuadratureSpec, build_pieces, integrate_rays
from .xray import DEFAULT_QUAD, support_radius, xray_grid_2d, xray_M_batch, xray_X_batch

log = logging.getLogger(__name__)

MODES = ("leading_magnetic", "electric_heuristic", "test")
TEST_SYMBOLS = ("gaussian_in_s",)
SYMBOL_EPS = 1e-12


class ResolutionError(ValueError):
    """Requested grid cannot resolve the kernel oscillation."""


class AliasingWarning(UserWarning):
    """Grid is above the hard Nyquist bound but below the default oversampling."""


# -- cutoff -------------------------------------------------------------------------------

def _smooth_step(t):
    """C-infinity step: 0 for t <= 0, 1 for t >= 1."""
    t = np.clip(np.asarray(t, dtype=float), 0.0, 1.0)
    with np.errstate(divide="ignore", over="ignore"):
        f = np.where(t > 0, np.exp(-1.0 / np.where(t > 0, t, 1.0)), 0.0)
        g = np.where(t < 1, np.exp(-1.0 / np.where(t < 1, 1.0 - t, 1.0)), 0.0)
    return f / (f + g)


@dataclass(frozen=True)
class CutoffSpec:
    """Angular cutoff chi(dtheta): 1 on the plateau, 0 beyond the support."""

    plateau: float = math.pi / 2
    support: float = 3 * math.pi / 4
    enabled: bool = True

    def __post_init__(self):
        if not 0 < self.plateau < self.support <= math.pi:
            raise ValueError("cutoff needs 0 < plateau < support <= pi")

    def __call__(self, dtheta) -> np.ndarray:
        x = np.abs(np.asarray(dtheta, dtype=float))
        x = np.abs((x + math.pi) % (2 * math.pi) - math.pi)
        if not self.enabled:
            return np.ones_like(x)
        return _smooth_step((self.support - x) / (self.support - self.plateau))

    def as_dict(self) -> dict:
        return {"plateau": self.plateau, "support": self.support, "enabled": self.enabled}


# -- symbols ------------------------------------------------------------------------------

@dataclass(frozen=True)
class SymbolSpec:
    """Which symbol to discretize.

    Parameters
    ----------
    mode : {"leading_magnetic", "electric_heuristic", "test"}
        ``leading_magnetic``: exp(iM) - 1.  ``electric_heuristic``:
        exp(i(M + X/k)) - 1, a heuristic stand-in for the first correction.
        ``test``: an analytic symbol independent of the field model.
    model : FieldModel, optional
        Required for the two field modes (d = 2).
    test_symbol : str
        Built-in analytic symbol for ``test`` mode.
    test_width : float
        Width w in the test symbol exp(-(s/w)^2).
    """

    mode: str = "leading_magnetic"
    model: FieldModel | None = None
    test_symbol: str = "gaussian_in_s"
    test_width: float = 1.0

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown symbol mode {self.mode!r}; expected one of {MODES}")
        if self.mode == "test":
            if self.test_symbol not in TEST_SYMBOLS:
                raise ValueError(f"unknown test symbol {self.test_symbol!r}")
            if not self.test_width > 0:
                raise ValueError("test_width must be positive")
        else:
            if self.model is None:
                raise ValueError(f"mode {self.mode!r} needs a field model")
            if self.model.dimension != 2:
                raise ValueError("operators are assembled on the circle only (d = 2)")

    @property
    def heuristic(self) -> bool:
        return self.mode == "electric_heuristic"

    @property
    def theta_independent(self) -> bool:
        return self.mode == "test" or self.model.rotation_invariant

    @property
    def is_zero(self) -> bool:
        if self.mode == "test":
            return False
        if self.mode == "leading_magnetic":
            return self.model.magnetic_is_zero
        return self.model.magnetic_is_zero and self.model.electric_is_zero

    def as_dict(self) -> dict:
        out = {"mode": self.mode}
        if self.mode == "test":
            out.update(test_symbol=self.test_symbol, test_width=self.test_width)
        else:
            m = self.model
            out["model"] = {
                "dimension": m.dimension,
                "magnetic": [term_to_mapping(t) for t in m.magnetic_terms],
                "electric": [term_to_mapping(t) for t in m.electric_terms],
            }
        return out


def _needs_k(spec: SymbolSpec, k):
    if spec.mode == "electric_heuristic" and (k is None or not k > 0):
        raise ValueError("electric_heuristic symbols need k > 0")


def _phase_grid(spec: SymbolSpec, thetas, s, k, quad) -> np.ndarray:
    """Real phase M (+ X/k) on a (theta, s) grid for the field modes."""
    phase = np.zeros((len(thetas), len(s)))
    if not spec.model.magnetic_is_zero:
        phase += xray_grid_2d(spec.model, thetas, s, "M", quad)
    if spec.mode == "electric_heuristic" and not spec.model.electric_is_zero:
        phase += xray_grid_2d(spec.model, thetas, s, "X", quad) / k
    return phase


def symbol_eval(spec: SymbolSpec, theta, s, k: float | None = None,
                quad: QuadratureSpec = DEFAULT_QUAD) -> np.ndarray:
    """sigma(omega(theta), s omega_perp(theta)) on the grid ``theta x s``.

    Scalars give a scalar-shaped result; otherwise the shape is
    (len(theta), len(s)).
    """
    _needs_k(spec, k)
    th = np.atleast_1d(np.asarray(theta, dtype=float))
    ss = np.atleast_1d(np.asarray(s, dtype=float))
    if spec.mode == "test":
        out = np.broadcast_to(np.exp(-(ss / spec.test_width) ** 2), (th.size, ss.size)).astype(complex)
    elif spec.is_zero:
        out = np.zeros((th.size, ss.size), dtype=complex)
    else:
        out = np.expm1(1j * _phase_grid(spec, th, ss, k, quad))
    if np.ndim(theta) == 0 and np.ndim(s) == 0:
        return out[0, 0]
    return out


def symbol_extent(spec: SymbolSpec, k: float | None = None, eps: float = SYMBOL_EPS) -> float:
    """Smallest radius beyond which |sigma| < eps (from term-wise bounds)."""
    if spec.mode == "test":
        return spec.test_width * math.sqrt(math.log(1.0 / eps))
    if spec.is_zero:
        return 0.0
    # |exp(i p) - 1| <= |p|, and p = M (+ X/k)
    r = 0.0
    if not spec.model.magnetic_is_zero:
        r = max(r, support_radius(spec.model, 0.5 * eps, "M"))
    if spec.mode == "electric_heuristic" and not spec.model.electric_is_zero:
        r = max(r, support_radius(spec.model, 0.5 * eps * k, "X"))
    return r


# -- operator -------------------------------------------------------------------------------

@dataclass(frozen=True)
class GridRule:
    """Resolution parameters for operator assembly.

    ``beta`` oversamples the kernel bandwidth k*s_max; ``s_cap`` bounds the
    s-extent for slowly decaying symbols, in which case the symbol is
    smoothly tapered to 0 between ``taper_start*s_cap`` and ``s_cap``.
    """

    beta: float = 4.0
    s_cap: float = 9.0
    taper_start: float = 2.0 / 3.0
    ds_factor: float = 0.25
    cheb_tol: float = 1e-10
    cheb_max: int = 1024

    def __post_init__(self):
        if not self.beta >= 2:
            raise ValueError("beta must be at least 2 (Nyquist)")
        if not self.s_cap > 0:
            raise ValueError("s_cap must be positive")
        if not 0 < self.taper_start < 1:
            raise ValueError("taper_start must lie in (0, 1)")
        if not 0 < self.ds_factor <= 0.5:
            raise ValueError("ds_factor must lie in (0, 0.5]")

    def as_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


DEFAULT_RULE = GridRule()


@dataclass(frozen=True)
class SGrid:
    """Uniform s-grid with spacing <= ds_factor * pi / k and optional taper."""

    s_max: float
    capped: bool
    s: np.ndarray
    ds: float
    taper: np.ndarray

    @classmethod
    def make(cls, spec: SymbolSpec, k: float, rule: GridRule) -> "SGrid":
        ext = symbol_extent(spec, k)
        capped = ext > rule.s_cap
        s_max = min(ext, rule.s_cap) if ext > 0 else 1.0
        n_half = int(math.ceil(s_max / (rule.ds_factor * math.pi / k)))
        n_half = max(n_half, 8)
        s = np.linspace(-s_max, s_max, 2 * n_half + 1)
        ds = s[1] - s[0]
        if capped:
            a = rule.taper_start * s_max
            taper = _smooth_step((s_max - np.abs(s)) / (s_max - a))
        else:
            taper = np.ones_like(s)
        return cls(s_max, capped, s, ds, taper)


def resolution_N(spec: SymbolSpec, k: float, rule: GridRule = DEFAULT_RULE) -> int:
    """Default grid size: ceil(beta * k * s_max) rounded up to even."""
    ext = symbol_extent(spec, k)
    s_max = min(ext, rule.s_cap) if ext > 0 else 1.0
    n = int(math.ceil(rule.beta * k * s_max))
    return n + (n % 2)


def minimal_N(s_max: float, k: float) -> int:
    """Hard lower bound: two samples per oscillation of the kernel in theta'."""
    n = int(math.ceil(2 * k * s_max))
    return n + (n % 2)


@dataclass
class OperatorMatrix:
    """Dense N x N discretization on the uniform angular grid.

    ``matrix`` holds Op (or I + Op when ``includes_identity``), with the
    trapezoid weights 2 pi / N already folded in.
    """

    matrix: np.ndarray
    k: float
    cutoff: CutoffSpec
    spec_hash: str
    includes_identity: bool = False
    norm_bound: float = float("nan")
    meta: dict = field(default_factory=dict)

    @property
    def N(self) -> int:
        return self.matrix.shape[0]

    @property
    def theta(self) -> np.ndarray:
        return 2 * math.pi * np.arange(self.N) / self.N

    @property
    def weights(self) -> np.ndarray:
        return np.full(self.N, 2 * math.pi / self.N)

    def op_part(self) -> np.ndarray:
        """Matrix of Op alone (identity removed when present)."""
        if not self.includes_identity:
            return self.matrix
        return self.matrix - np.eye(self.N)


def _canonical(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False)


def operator_hash(spec: SymbolSpec, k: float, N: int, cutoff: CutoffSpec,
                  rule: GridRule = DEFAULT_RULE, identity: bool = False) -> str:
    """sha256 over the canonical description of one matrix."""
    payload = {
        "spec": spec.as_dict(), "k": float(k), "N": int(N), "cutoff": cutoff.as_dict(),
        "rule": rule.as_dict(), "identity": bool(identity), "layout": 1,
    }
    return hashlib.sha256(_canonical(payload).encode()).hexdigest()


def _cheb_nodes(n: int, a: float) -> np.ndarray:
    return a * np.cos(math.pi * (np.arange(n) + 0.5) / n)


def _cheb_interp_matrix(nodes: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Barycentric interpolation matrix from first-kind Chebyshev nodes to x."""
    n = nodes.size
    j = np.arange(n)
    w = (-1.0) ** j * np.sin(math.pi * (2 * j + 1) / (2 * n))
    diff = x[:, None] - nodes[None, :]
    exact = diff == 0
    diff[exact] = 1.0
    c = w / diff
    P = c / c.sum(axis=1, keepdims=True)
    rows = np.flatnonzero(exact.any(axis=1))
    P[rows] = exact[rows].astype(float)
    return P


def _phase_on_theta_grid(spec, thetas, sg: SGrid, k, rule: GridRule, quad):
    """Phase on (theta_j, s_m) through Chebyshev interpolation in s.

    The node count doubles until interpolation matches direct evaluation at
    probe points to ``rule.cheb_tol``.
    """
    rng = np.random.default_rng(12345)
    probe_th = thetas[rng.choice(thetas.size, size=min(8, thetas.size), replace=False)]
    probe_s = rng.uniform(-sg.s_max, sg.s_max, 48)
    direct = _phase_grid(spec, probe_th, probe_s, k, quad)
    n = 64
    while True:
        nodes = _cheb_nodes(n, sg.s_max)
        vals = _phase_grid(spec, probe_th, nodes, k, quad)
        err = float(np.max(np.abs(vals @ _cheb_interp_matrix(nodes, probe_s).T - direct)))
        if err <= rule.cheb_tol or n >= rule.cheb_max:
            break
        n *= 2
    if err > rule.cheb_tol:
        warnings.warn(f"s-interpolation error {err:.2e} exceeds {rule.cheb_tol:.1e}", RuntimeWarning)
    full = _phase_grid(spec, thetas, nodes, k, quad)
    return full @ _cheb_interp_matrix(nodes, sg.s).T, {"cheb_nodes": n, "cheb_error": err}


def _symbol_rows(spec: SymbolSpec, thetas, sg: SGrid, k, rule, quad):
    """sigma (times taper) at (theta_j, s_m); a single row when theta-independent."""
    info = {}
    if spec.mode == "test":
        sig = np.exp(-(sg.s / spec.test_width) ** 2)[None, :].astype(complex)
    elif spec.theta_independent:
        sig = np.expm1(1j * _phase_grid(spec, np.zeros(1), sg.s, k, quad))
    else:
        phase, info = _phase_on_theta_grid(spec, thetas, sg, k, rule, quad)
        sig = np.expm1(1j * phase)
    return sig * sg.taper, info


def _fourier_columns(sig: np.ndarray, s: np.ndarray, ds: float, eta: np.ndarray):
    """sigma_hat at +eta and -eta for every row: returns (plus, minus)."""
    arg = np.outer(s, eta)
    C, S = np.cos(arg), np.sin(arg)
    stacked = np.concatenate([sig.real, sig.imag], axis=0)
    n = sig.shape[0]
    SC, SS = stacked @ C, stacked @ S
    gc = (SC[:n] + 1j * SC[n:]) * ds
    gs = (SS[:n] + 1j * SS[n:]) * ds
    return gc - 1j * gs, gc + 1j * gs


def build_operator(spec: SymbolSpec, k: float, N: int | None = None,
                   cutoff: CutoffSpec = CutoffSpec(), rule: GridRule = DEFAULT_RULE,
                   quad: QuadratureSpec = DEFAULT_QUAD) -> OperatorMatrix:
    """Assemble the Nystrom matrix of Op_{1/k}[sigma].

    Raises
    ------
    ResolutionError
        If N is below the two-samples-per-oscillation bound 2 k s_max.
    """
    if not (math.isfinite(k) and k > 0):
        raise ValueError("k must be a positive finite number")
    _needs_k(spec, k)
    if N is None:
        N = resolution_N(spec, k, rule)
    N = int(N)
    if N < 4 or N % 2:
        raise ResolutionError(f"N must be even and at least 4, got {N}")
    sg = SGrid.make(spec, k, rule)
    hash_ = operator_hash(spec, k, N, cutoff, rule)
    meta = {"s_max": sg.s_max, "capped": sg.capped, "ds": sg.ds, "n_s": int(sg.s.size),
            "beta_effective": N / (k * sg.s_max), "heuristic": spec.heuristic,
            "mode": spec.mode, "circulant": spec.theta_independent,
            "magnetic_zero": spec.mode == "test" or spec.model.magnetic_is_zero}
    if spec.is_zero:
        return OperatorMatrix(np.zeros((N, N), dtype=complex), k, cutoff, hash_, False, 0.0, meta)
    n_min = minimal_N(sg.s_max, k)
    if N < n_min:
        raise ResolutionError(f"N={N} cannot resolve kernel bandwidth k*s_max={k * sg.s_max:.4g}; need N >= {n_min}")
    if N < rule.beta * k * sg.s_max:
        warnings.warn(f"N={N} is below beta*k*s_max={rule.beta * k * sg.s_max:.1f}: aliasing risk", AliasingWarning)

    theta = 2 * math.pi * np.arange(N) / N
    sig, info = _symbol_rows(spec, theta, sg, k, rule, quad)
    meta.update(info)
    half = N // 2
    ncol = N // 4 + 1
    eta = k * np.sin(2 * math.pi * np.arange(ncol) / N)
    plus, minus = _fourier_columns(sig, sg.s, sg.ds, eta)

    q = np.arange(N)
    r = q % half
    col = np.minimum(r, half - r)
    neg = q > half
    chi = cutoff(2 * math.pi * q / N)
    # V[j, q] = entry for l = j - q
    V = np.where(neg[None, :], minus[:, col], plus[:, col]) * (chi * (k / N))[None, :]
    if V.shape[0] == 1:
        mat = V[0][(q[:, None] - q[None, :]) % N]
    else:
        mat = np.empty((N, N), dtype=complex)
        rows = np.arange(N)
        for lo in range(0, N, 512):
            j = rows[lo:lo + 512]
            mat[j[:, None], (j[:, None] - q[None, :]) % N] = V[j]
    absm = np.abs(mat)
    bound = float(math.sqrt(absm.sum(axis=1).max() * absm.sum(axis=0).max()))
    log.debug("built operator N=%d k=%g s_max=%g", N, k, sg.s_max)
    return OperatorMatrix(mat, k, cutoff, hash_, False, bound, meta)


def assemble_scattering_matrix(spec: SymbolSpec, k: float, N: int | None = None,
                               cutoff: CutoffSpec = CutoffSpec(), rule: GridRule = DEFAULT_RULE,
                               quad: QuadratureSpec = DEFAULT_QUAD) -> OperatorMatrix:
    """S(k) approximated by I + Op_{1/k}[sigma] (smoothing remainders not modelled)."""
    op = build_operator(spec, k, N, cutoff, rule, quad)
    mat = op.matrix
    mat[np.diag_indices_from(mat)] += 1.0
    return OperatorMatrix(mat, k, cutoff, operator_hash(spec, k, op.N, cutoff, rule, True),
                          True, op.norm_bound, op.meta)


def operator_trace(op: OperatorMatrix) -> complex:
    """Trace of the Op part."""
    tr = complex(np.trace(op.matrix))
    return tr - op.N if op.includes_identity else tr


def trace_formula_reference(spec: SymbolSpec, k: float, rule: GridRule = DEFAULT_RULE,
                            n_theta: int = 64,
                            quad: QuadratureSpec = QuadratureSpec(abs_tol=1e-12, rel_tol=1e-12)
                            ) -> complex:
    """(k / 2 pi) * int int sigma(theta, s) ds dtheta by adaptive quadrature.

    The symbol carries the same taper as the assembled operator, so that
    the comparison isolates the discretization error.
    """
    _needs_k(spec, k)
    if spec.is_zero:
        return 0j
    sg = SGrid.make(spec, k, rule)
    thetas = np.zeros(1) if spec.theta_independent else 2 * math.pi * np.arange(n_theta) / n_theta
    a = rule.taper_start * sg.s_max

    def integrand(p, _d):
        th = thetas[np.rint(p[:, 0]).astype(int)]
        s = p[:, 1]
        if spec.mode == "test":
            val = np.exp(-(s / spec.test_width) ** 2).astype(complex)
        else:
            ph = np.zeros(s.size)
            om = np.stack([np.cos(th), np.sin(th)], axis=1)
            pts = s[:, None] * np.stack([-np.sin(th), np.cos(th)], axis=1)
            if not spec.model.magnetic_is_zero:
                ph += xray_M_batch(spec.model, om, pts, quad)
            if spec.mode == "electric_heuristic" and not spec.model.electric_is_zero:
                ph += xray_X_batch(spec.model, om, pts, quad) / k
            val = np.expm1(1j * ph)
        if sg.capped:
            val = val * _smooth_step((sg.s_max - np.abs(s)) / (sg.s_max - a))
        return val

    bp = np.linspace(-sg.s_max, sg.s_max, 33)
    L = thetas.size
    pieces = build_pieces(np.tile(bp, (L, 1)), np.full(L, 1.0), False)
    bases = np.stack([np.arange(L, dtype=float), np.zeros(L)], axis=1)
    dirs = np.tile([0.0, 1.0], (L, 1))
    vals = integrate_rays(integrand, bases, dirs, pieces, quad)[:, 0]
    return complex(k / (2 * math.pi) * np.sum(vals) * (2 * math.pi / L))


def norm_estimate(op: OperatorMatrix, tol: float = 1e-10) -> float:
    """Largest singular value of the Op part (Lanczos bidiagonalization)."""
    B = op.op_part()
    if not np.any(B):
        return 0.0
    if op.N <= 64:
        return float(np.linalg.norm(B, 2))
    v0 = np.ones(op.N, dtype=complex) / math.sqrt(op.N)
    return float(svds(B, k=1, tol=tol, v0=v0, return_singular_vectors=False)[0])


# -- binary layout ------------------------------------------------------------------------------

MAGIC = b"MSPO"
VERSION = 1
_HEADER = struct.Struct("<4sIQQd32sI")


def encode_matrix(data: np.ndarray, k: float, hash_hex: str, meta: dict | None = None) -> bytes:
    """Header (magic, version, N, ncols, k, hash, meta length), JSON meta, complex128 data."""
    arr = np.ascontiguousarray(np.asarray(data, dtype="<c16"))
    if arr.ndim == 1:
        arr = arr[:, None]
    blob = json.dumps(meta or {}, sort_keys=True).encode()
    head = _HEADER.pack(MAGIC, VERSION, arr.shape[0], arr.shape[1], float(k),
                        bytes.fromhex(hash_hex), len(blob))
    return head + blob + arr.tobytes()


def decode_matrix(raw: bytes, expect_hash: str | None = None):
    """Inverse of :func:`encode_matrix`; raises ValueError on any inconsistency."""
    if len(raw) < _HEADER.size:
        raise ValueError("truncated header")
    magic, ver, n, ncols, k, h, mlen = _HEADER.unpack_from(raw)
    if magic != MAGIC or ver != VERSION:
        raise ValueError("bad magic or version")
    start = _HEADER.size + mlen
    if len(raw) != start + 16 * n * ncols:
        raise ValueError("payload size does not match header")
    if expect_hash is not None and h.hex() != expect_hash:
        raise ValueError("hash mismatch")
    meta = json.loads(raw[_HEADER.size:start].decode())
    data = np.frombuffer(raw, dtype="<c16", offset=start).reshape(n, ncols).astype(complex)
    return data, k, h.hex(), meta


def operator_to_bytes(op: OperatorMatrix) -> bytes:
    meta = {"cutoff": op.cutoff.as_dict(), "includes_identity": op.includes_identity,
            "norm_bound": op.norm_bound, "meta": op.meta}
    return encode_matrix(op.matrix, op.k, op.spec_hash, meta)


def operator_from_bytes(raw: bytes, expect_hash: str | None = None) -> OperatorMatrix:
    data, k, h, meta = decode_matrix(raw, expect_hash)
    if data.shape[0] != data.shape[1]:
        raise ValueError("operator payload is not square")
    return OperatorMatrix(data, k, CutoffSpec(**meta["cutoff"]), h, meta["includes_identity"],
                          meta["norm_bound"], meta.get("meta", {}))
